#include "cre/graph.hpp"

namespace cre {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::grad_scale: return "grad_scale";
    case OpKind::square: return "square";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::conv2d: return "conv2d";
    case OpKind::conv_transpose2d: return "conv_transpose2d";
    case OpKind::maxpool2d: return "maxpool2d";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::gelu: return "gelu";
    case OpKind::softmax: return "softmax";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::batch_norm: return "batch_norm";
    case OpKind::dropout: return "dropout";
    case OpKind::drop_path: return "drop_path";
    case OpKind::reshape: return "reshape";
    case OpKind::permute: return "permute";
    case OpKind::mean_over_axis: return "mean_over_axis";
    case OpKind::concat: return "concat";
    case OpKind::gather_tokens: return "gather_tokens";
    case OpKind::scatter_tokens: return "scatter_tokens";
    case OpKind::pick: return "pick";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph->value(*this); }
const Shape& Var::shape() const { return graph->value(*this).shape; }

Var Graph::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) {
    throw NonFiniteError("leaf of shape " + to_string(value.shape) + " holds non-finite values");
  }
  Node node;
  node.kind = OpKind::leaf;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(std::unique_ptr<Op> op, std::span<const Var> inputs) {
  Node node;
  node.kind = op->kind();
  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.graph != this) throw Error(std::string(op_name(node.kind)) + ": input from another graph");
    node.inputs.push_back(v.id);
    node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
    in.push_back(&nodes_[v.id].value);
  }
  op->forward(in, node.value);
  node.op = std::move(op);
  nodes_.push_back(std::move(node));
  consumed_ = false;
  return Var{this, nodes_.size() - 1};
}

Tensor& Graph::leaf_value(Var v) {
  auto& node = nodes_.at(v.id);
  if (node.kind != OpKind::leaf) throw Error("leaf_value: node is not a leaf");
  return node.value;
}

const Tensor& Graph::forward(Var root) {
  std::vector<const Tensor*> in;
  for (std::size_t i = 0; i <= root.id; ++i) {
    auto& node = nodes_[i];
    if (node.kind == OpKind::leaf) {
      if (!node.value.all_finite()) {
        throw NonFiniteError("forward: leaf " + std::to_string(i) + " holds non-finite values");
      }
      continue;
    }
    in.clear();
    for (auto id : node.inputs) in.push_back(&nodes_[id].value);
    node.op->forward(in, node.value);
  }
  consumed_ = false;
  return nodes_[root.id].value;
}

GradientMap Graph::backward(Var loss) {
  if (consumed_) throw Error("backward: graph already consumed; replay forward first");
  auto& root = nodes_.at(loss.id);
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(root.value.shape));
  }
  for (auto& node : nodes_) {
    node.has_grad = false;
    node.grad = Tensor();
  }
  root.grad = Tensor(root.value.shape, 1.0);
  root.has_grad = true;

  std::vector<const Tensor*> in;
  std::vector<Tensor*> gin;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.has_grad || node.kind == OpKind::leaf || !node.requires_grad) continue;
    in.clear();
    gin.clear();
    for (auto id : node.inputs) {
      auto& src = nodes_[id];
      in.push_back(&src.value);
      if (src.requires_grad) {
        if (!src.has_grad) {
          src.grad = Tensor(src.value.shape, 0.0);
          src.has_grad = true;
        }
        gin.push_back(&src.grad);
      } else {
        gin.push_back(nullptr);
      }
    }
    node.op->backward(in, node.value, node.grad, gin);
  }
  for (auto& node : nodes_) {
    if (node.kind == OpKind::leaf && node.requires_grad && !node.has_grad) {
      node.grad = Tensor(node.value.shape, 0.0);
      node.has_grad = true;
    }
  }
  consumed_ = true;
  return GradientMap(*this);
}

const Tensor& Graph::grad(Var v) const {
  auto& node = nodes_.at(v.id);
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape, 0.0);
  }
  return node.grad;
}

}  // namespace cre
