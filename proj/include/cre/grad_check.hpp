#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cre/graph.hpp"

namespace cre {

struct LeafCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // values at worst_index
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<LeafCheck> leaves;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  // Entries below this magnitude are compared absolutely.
  double floor = 1e-6;
  // 0 checks every entry; otherwise an evenly strided subset of each leaf.
  std::size_t max_entries_per_leaf = 0;
};

/// Compares backward() against central differences of `output` (a scalar node)
/// for each listed leaf. Mismatches are reported, never thrown. Leaf values are
/// restored and the graph is replayed before returning.
GradCheckReport grad_check(Graph& graph, Var output, std::span<const Var> leaves,
                           const GradCheckOptions& options = {});

/// Same comparison for code outside the graph engine: `f` reads the current
/// contents of each leaf span, `analytic` holds the claimed gradients.
struct FunctionLeaf {
  std::string name;
  std::span<double> values;
  std::vector<double> analytic;
};

GradCheckReport grad_check(const std::function<double()>& f, std::vector<FunctionLeaf> leaves,
                           const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace cre
