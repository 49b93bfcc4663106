#pragma once

#include <cstdint>
#include <vector>

#include "cre/nn.hpp"

namespace cre::nn {

struct AdamOptions {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction over a fixed parameter list. One instance per
/// CRE module (encoder, decoder, classifier).
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions options = {});

  /// Applies one update from Parameter::grad. Throws NonFiniteError, leaving
  /// every parameter untouched, if any gradient is non-finite.
  void step();
  void zero_grad();

  std::uint64_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  std::vector<Parameter*> params_;
  AdamOptions options_;
  std::vector<Tensor> m_, v_;
  std::uint64_t steps_ = 0;
};

}  // namespace cre::nn
