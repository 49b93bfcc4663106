#include "cre/losses.hpp"

#include "cre/ops.hpp"

namespace cre::nn {

Var mse_loss(Var prediction, Var target) {
  if (prediction.shape() != target.shape()) {
    throw ShapeError("mse_loss: shape mismatch " + to_string(prediction.shape()) + " vs " + to_string(target.shape()));
  }
  return ops::mean(ops::square(ops::sub(prediction, target)));
}

Var masked_mse_loss(Var prediction, Var target, const Tensor& element_mask) {
  if (prediction.shape() != target.shape() || element_mask.shape != prediction.shape()) {
    throw ShapeError("masked_mse_loss: shape mismatch " + to_string(prediction.shape()) + " / " +
                     to_string(target.shape()) + " / mask " + to_string(element_mask.shape));
  }
  double count = 0.0;
  for (double w : element_mask.data) count += w != 0.0 ? 1.0 : 0.0;
  if (count == 0.0) throw Error("masked_mse_loss: mask selects no elements");
  Var weights = prediction.graph->leaf(element_mask, false);
  Var err = ops::mul(ops::square(ops::sub(prediction, target)), weights);
  return ops::scale(ops::sum(err), 1.0 / count);
}

Var cross_entropy_loss(Var logits, const std::vector<std::size_t>& labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw ShapeError("cross_entropy_loss: logits " + to_string(s) + " for " + std::to_string(labels.size()) +
                     " labels");
  }
  for (auto l : labels) {
    if (l >= s[1]) throw Error("cross_entropy_loss: label " + std::to_string(l) + " out of range");
  }
  Var picked = ops::pick(ops::log_softmax(logits), labels);
  return ops::scale(ops::mean(picked), -1.0);
}

}  // namespace cre::nn
