#include "cre/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace cre {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

LeafCheck check_leaf(const std::string& name, std::span<double> values, std::span<const double> analytic,
                     const std::function<double()>& f, const GradCheckOptions& o) {
  LeafCheck leaf;
  leaf.name = name;
  const std::size_t n = values.size();
  const std::size_t stride =
      (o.max_entries_per_leaf == 0 || n <= o.max_entries_per_leaf) ? 1 : (n + o.max_entries_per_leaf - 1) / o.max_entries_per_leaf;
  for (std::size_t i = 0; i < n; i += stride) {
    const double saved = values[i];
    values[i] = saved + o.step;
    const double fp = f();
    values[i] = saved - o.step;
    const double fm = f();
    values[i] = saved;
    const double numeric = (fp - fm) / (2.0 * o.step);
    const double err = relative_error(analytic[i], numeric, o.floor);
    if (err > leaf.max_rel_error || i == 0) {
      leaf.max_rel_error = std::max(leaf.max_rel_error, err);
      leaf.worst_index = i;
      leaf.analytic = analytic[i];
      leaf.numeric = numeric;
    }
  }
  return leaf;
}

GradCheckReport finish(std::vector<LeafCheck> leaves, double tolerance) {
  GradCheckReport r;
  r.tolerance = tolerance;
  r.leaves = std::move(leaves);
  for (const auto& l : r.leaves) r.max_rel_error = std::max(r.max_rel_error, l.max_rel_error);
  r.passed = std::isfinite(r.max_rel_error) && r.max_rel_error < tolerance;
  return r;
}

}  // namespace

GradCheckReport grad_check(Graph& graph, Var output, std::span<const Var> leaves, const GradCheckOptions& options) {
  graph.forward(output);
  auto grads = graph.backward(output);
  std::vector<Tensor> analytic;
  for (const Var& v : leaves) analytic.push_back(grads[v]);

  auto f = [&] { return graph.forward(output).item(); };
  std::vector<LeafCheck> checks;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    Tensor& value = graph.leaf_value(leaves[i]);
    checks.push_back(check_leaf("leaf#" + std::to_string(leaves[i].id), value.data, analytic[i].data, f, options));
  }
  graph.forward(output);
  return finish(std::move(checks), options.tolerance);
}

GradCheckReport grad_check(const std::function<double()>& f, std::vector<FunctionLeaf> leaves,
                           const GradCheckOptions& options) {
  std::vector<LeafCheck> checks;
  for (auto& leaf : leaves) {
    if (leaf.analytic.size() != leaf.values.size()) {
      throw ShapeError("grad_check: analytic gradient size differs for " + leaf.name);
    }
    checks.push_back(check_leaf(leaf.name, leaf.values, leaf.analytic, f, options));
  }
  return finish(std::move(checks), options.tolerance);
}

}  // namespace cre
