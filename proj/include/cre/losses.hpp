#pragma once

#include <cstddef>
#include <vector>

#include "cre/graph.hpp"

namespace cre::nn {

/// Mean over all elements of (prediction - target)^2.
Var mse_loss(Var prediction, Var target);

/// Squared error averaged over the entries where `element_mask` is nonzero.
/// Throws when the mask selects nothing.
Var masked_mse_loss(Var prediction, Var target, const Tensor& element_mask);

/// Batch mean of -log softmax(logits)[label]; logits are [B, K].
Var cross_entropy_loss(Var logits, const std::vector<std::size_t>& labels);

}  // namespace cre::nn
