#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cre/tensor.hpp"

/// Forward predictive-coding network. Layer l (1..L) predicts the activity of
/// layer l-1 as u_{l-1} = W_l phi(x_l); e_l = x_l - u_l; E = 1/2 sum |e_l|^2.
/// Activities are batched row vectors, x_l is [B, d_l].
namespace cre::pcn {

enum class Activation { tanh, identity };

struct Config {
  std::vector<std::size_t> sizes;  // d_0 (bottom) .. d_L (top)
  Activation activation = Activation::tanh;
  double step = 0.05;             // inference step size
  std::size_t iterations = 200;
  double tolerance = 1e-8;        // early stop on |delta E|
  std::size_t divergence_window = 10;
};

/// E increased for `divergence_window` consecutive inference steps.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class Model {
 public:
  /// W_l ~ N(0, 1/d_l), drawn from `seed`.
  Model(Config config, std::uint64_t seed);

  const Config& config() const { return config_; }
  std::size_t depth() const { return weights.size(); }  // L

  std::vector<Tensor> weights;  // weights[l-1] = W_l, [d_{l-1}, d_l]

 private:
  Config config_;
};

struct State {
  std::vector<Tensor> x;  // L + 1 activities
  std::vector<Tensor> u;  // u[l] for l < L; u[L] unused (empty)
  std::vector<Tensor> e;  // e[l] = x[l] - u[l] for l < L
  std::vector<bool> clamped;
  std::size_t batch = 0;
};

/// Zero activities, nothing clamped, refreshed.
State make_state(const Model& m, std::size_t batch);
/// Recomputes predictions and errors from the current activities.
void refresh(const Model& m, State& s);
double energy(const State& s);

/// dE/dx_l for every layer (clamped ones included), from a refreshed state.
std::vector<Tensor> activity_gradients(const Model& m, const State& s);
/// dE/dW_l summed over the batch, from a refreshed state.
std::vector<Tensor> weight_gradients(const Model& m, const State& s);

enum class Mode { classify, generate };

/// classify clamps x_0 to `value` [B, d_0]; generate clamps x_L to `value` [B, d_L].
State prepare(const Model& m, Mode mode, const Tensor& value);

struct Trace {
  std::vector<double> energy;  // initial energy, then one entry per step taken
  std::size_t steps = 0;
  bool converged = false;
};

/// Synchronous gradient descent on E over the unclamped activities. Throws
/// DivergenceError when E rises for divergence_window consecutive steps.
Trace infer(const Model& m, State& s);

/// Argmax of the inferred top layer per sample.
std::vector<std::size_t> classify(const Model& m, const Tensor& inputs);
/// Inferred bottom layer for clamped top activities.
Tensor generate(const Model& m, const Tensor& top);

struct LearnOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;  // minibatch order
};

/// Per minibatch: clamp both ends, infer, then W_l -= lr * mean-over-batch dE/dW_l.
/// Returns the mean post-inference energy per sample for each epoch.
std::vector<double> learn(Model& m, const Tensor& inputs, const Tensor& targets, const LearnOptions& options);

/// One-hot rows [N, classes].
Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes);

}  // namespace cre::pcn
