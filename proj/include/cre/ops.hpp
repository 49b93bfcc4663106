#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "cre/graph.hpp"

/// Differentiable primitives. Each call evaluates eagerly and records a node
/// on the graph owning its inputs.
namespace cre::ops {

/// Matrix product over the last two axes. `a` is [..., m, k]; `b` is either a
/// shared [k, n] matrix or carries the same leading axes as `a`.
Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);

// Elementwise with trailing broadcast: b's shape must equal a's shape or be a
// suffix of it.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var x, double factor);
/// Identity on the forward pass; multiplies the adjoint by `factor`.
Var grad_scale(Var x, double factor);
Var square(Var x);
Var sum(Var x);
Var mean(Var x);

Var relu(Var x);
Var tanh(Var x);
/// Exact form x * Phi(x).
Var gelu(Var x);
Var softmax(Var x);      // last axis
Var log_softmax(Var x);  // last axis

/// Normalizes over the last axis, then applies per-feature gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double epsilon = 1e-5);

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
};

/// Per-channel normalization over axis 1 of [N, C] or [N, C, H, W].
/// Training mode normalizes with batch statistics and folds them into
/// `running` (momentum-weighted, unbiased variance); evaluation mode uses
/// `running`.
Var batch_norm(Var x, Var gain, Var bias, BatchNormStats& running, bool training,
               double momentum = 0.1, double epsilon = 1e-5);

/// Inverted dropout. With `channelwise`, whole [H, W] planes of a rank-4
/// input are dropped together. The mask is drawn once, at record time.
Var dropout(Var x, double p, bool training, Rng& rng, bool channelwise = false);
/// Drops the whole sample (axis 0) with probability p.
Var drop_path(Var x, double p, bool training, Rng& rng);

Var reshape(Var x, Shape shape);
Var permute(Var x, std::vector<std::size_t> axes);
Var mean_over_axis(Var x, std::size_t axis);
Var concat(const std::vector<Var>& xs, std::size_t axis);

/// x [B, T, D] -> [B, K, D] keeping rows indices[b].
Var gather_tokens(Var x, std::vector<std::vector<std::size_t>> indices);
/// Places visible [B, K, D] at indices[b] of a [B, T, D] grid and fills every
/// other slot with `fill` [D].
Var scatter_tokens(Var visible, Var fill, std::vector<std::vector<std::size_t>> indices,
                   std::size_t num_tokens);
/// x [B, K] -> [B], element indices[b] of each row.
Var pick(Var x, std::vector<std::size_t> indices);

/// Cross-correlation. x [N, C, H, W] (or [C, H, W]); kernel [O, C, kH, kW].
Var conv2d(Var x, Var kernel, std::optional<Var> bias, std::size_t stride, std::size_t padding);
/// Adjoint of conv2d. kernel [C_in, C_out, kH, kW];
/// H' = (H - 1) * stride - 2 * padding + kH + output_padding.
Var conv_transpose2d(Var x, Var kernel, std::optional<Var> bias, std::size_t stride,
                     std::size_t padding, std::size_t output_padding = 0);
/// Padding cells act as -inf. The adjoint goes to the first row-major argmax.
Var maxpool2d(Var x, std::size_t window, std::size_t stride, std::size_t padding = 0);

}  // namespace cre::ops
