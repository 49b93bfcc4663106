#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "cre/tensor.hpp"

namespace cre {

enum class OpKind {
  leaf,
  matmul,
  add,
  sub,
  mul,
  scale,
  grad_scale,
  square,
  sum,
  mean,
  conv2d,
  conv_transpose2d,
  maxpool2d,
  relu,
  tanh,
  gelu,
  softmax,
  log_softmax,
  layer_norm,
  batch_norm,
  dropout,
  drop_path,
  reshape,
  permute,
  mean_over_axis,
  concat,
  gather_tokens,
  scatter_tokens,
  pick,
};

std::string_view op_name(OpKind kind);

class Graph;

/// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const;
  bool valid() const { return graph != nullptr; }
};

/// Forward rule plus adjoint rule for one node. Implementations may keep
/// whatever activations the adjoint needs; forward() is re-run on replay.
class Op {
 public:
  virtual ~Op() = default;
  virtual OpKind kind() const = 0;
  virtual void forward(std::span<const Tensor* const> inputs, Tensor& output) = 0;
  /// Accumulates into grad_inputs[i]; entries are null for inputs that need no gradient.
  virtual void backward(std::span<const Tensor* const> inputs, const Tensor& output,
                        const Tensor& grad_output, std::span<Tensor* const> grad_inputs) = 0;
};

class GradientMap;

/// Append-only computation record. Nodes are evaluated as they are recorded,
/// so inputs always precede their consumers.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = delete;
  Graph& operator=(Graph&&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var record(std::unique_ptr<Op> op, std::span<const Var> inputs);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Leaf storage, for rebinding inputs before a replay.
  Tensor& leaf_value(Var v);

  /// Re-evaluates every node up to `root` from the current leaf values.
  const Tensor& forward(Var root);

  /// Reverse sweep from a scalar node. Every requires_grad leaf ends with a
  /// gradient (zero when it does not participate).
  GradientMap backward(Var loss);

  /// Gradient of the last backward pass; zero-filled if none reached v.
  const Tensor& grad(Var v) const;

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<std::size_t> inputs;
    std::unique_ptr<Op> op;
    Tensor value;
    mutable Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

class GradientMap {
 public:
  explicit GradientMap(const Graph& g) : graph_(&g) {}
  const Tensor& operator[](Var v) const { return graph_->grad(v); }

 private:
  const Graph* graph_;
};

}  // namespace cre
