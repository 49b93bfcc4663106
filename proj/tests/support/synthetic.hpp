#pragma once

// Small learnable image sets for fast harness and reporting tests.

#include <algorithm>
#include <random>

#include "cre/datasets.hpp"

namespace cre::testing {

/// 28x28 images in [-1, 1]: background -1 with light noise, class k draws a
/// bright bar on rows 2k+4 and 2k+5.
inline data::Dataset bars(std::size_t n, std::uint64_t seed, data::Split split = data::Split::train) {
  Rng rng(seed);
  std::uniform_real_distribution<double> noise(0.0, 0.2);
  data::Dataset d{"mnist", Tensor({n, 1, 28, 28}), {}, split};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 10;
    d.labels.push_back(label);
    for (std::size_t r = 0; r < 28; ++r)
      for (std::size_t c = 0; c < 28; ++c) {
        const bool on = (r == 2 * label + 4 || r == 2 * label + 5) && c >= 4 && c < 24;
        d.images[(i * 28 + r) * 28 + c] = on ? 1.0 - noise(rng) : -1.0 + noise(rng);
      }
  }
  return d;
}

}  // namespace cre::testing
