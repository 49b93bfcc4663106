#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cre/adam.hpp"
#include "cre/datasets.hpp"
#include "cre/models.hpp"

namespace cre::baselines {

struct PcaBasis {
  Tensor mean;        // [d]
  Tensor components;  // [n, d], orthonormal rows
  std::vector<double> eigenvalues;  // descending

  std::size_t n() const { return components.dim(0); }
  std::size_t d() const { return components.dim(1); }
};

struct PcaOptions {
  double angle_tolerance = 1e-10;
  std::size_t max_iterations = 10000;
};

/// Top-n eigenvectors of the sample covariance of `data` [N, d] (or any
/// [N, ...] tensor, flattened per row), by power iteration with deflation.
PcaBasis fit_pca(const Tensor& data, std::size_t n, const PcaOptions& options = {});

/// Entries drawn once from N(0, 1) / sqrt(d).
class RandomProjection {
 public:
  RandomProjection(std::size_t d, std::size_t n, std::uint64_t seed);

  const Tensor& matrix() const { return matrix_; }  // [n, d]
  std::uint64_t seed() const { return seed_; }
  std::size_t n() const { return matrix_.dim(0); }
  std::size_t d() const { return matrix_.dim(1); }

 private:
  Tensor matrix_;
  std::uint64_t seed_;
};

/// Codes [N, n]; PCA centers on the basis mean first.
Representation project(const PcaBasis& basis, const Tensor& images);
Representation project(const RandomProjection& rp, const Tensor& images);

/// mean + codes * components, [N, d].
Tensor reconstruct(const PcaBasis& basis, const Tensor& codes);
/// Mean squared error of project-then-reconstruct over every entry of `data`.
double reconstruction_error(const PcaBasis& basis, const Tensor& data);

/// A fixed linear map x -> (x - mean) M^T, held as a frozen parameter so head
/// training can bind it without ever updating it.
struct FrozenProjection {
  RepresentationKind kind = RepresentationKind::pca;
  Tensor mean;             // [d]
  nn::Parameter matrix;    // [n, d], trainable = false

  std::size_t n() const { return matrix.value.dim(0); }
  std::size_t d() const { return matrix.value.dim(1); }
};

FrozenProjection frozen(const PcaBasis& basis);
FrozenProjection frozen(const RandomProjection& rp);

enum class HeadKind { classifier, decoder };

struct HeadOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  // PCA codes are large (leading std ~4.6 on MNIST) and saturate a Tanh
  // decoder; 1e-3 leaves such heads far from converged in 20 epochs.
  double step_size = 1e-2;
  std::uint64_t seed = 0;
};

struct HeadEpoch {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double test_accuracy = 0.0;  // classifier heads
  double test_mse = 0.0;       // decoder heads
};

struct HeadResult {
  HeadKind kind = HeadKind::classifier;
  nn::LayerStack head;
  std::vector<HeadEpoch> epochs;
  double best_accuracy = 0.0;
  double best_mse = 0.0;
};

/// The fc/small classifier (Linear n -> 10) or decoder (Linear n -> pixels,
/// Tanh) for an n-dimensional representation.
nn::LayerStack make_head(HeadKind kind, std::size_t n, const ImageShape& image, std::uint64_t seed);

/// Trains a head with Adam on CE (classifier) or MSE (decoder) over the frozen
/// representation; evaluates on `test` after every epoch.
HeadResult train_head(FrozenProjection& source, HeadKind kind, const data::Dataset& train, const data::Dataset& test,
                      const HeadOptions& options);

}  // namespace cre::baselines
