#include <cmath>

#include "cre/baselines.hpp"
#include "doctest.h"
#include "support/pca_oracle.hpp"

using namespace cre;
using namespace cre::baselines;

namespace {

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

TEST_CASE("points on a line") {
  Tensor x({6, 2});
  for (std::size_t i = 0; i < 6; ++i) {
    const double t = static_cast<double>(i) - 2.5;
    x[2 * i] = 0.6 * t;
    x[2 * i + 1] = 0.8 * t;
  }
  PcaBasis b = fit_pca(x, 1);
  CHECK(std::abs(std::abs(b.components[0] * 0.6 + b.components[1] * 0.8) - 1.0) < 1e-12);
  CHECK(reconstruction_error(b, x) < 1e-24);
  // the second component of rank-1 data is any unit vector orthogonal to the first
  PcaBasis b2 = fit_pca(x, 2);
  CHECK(std::abs(b2.eigenvalues[1]) < 1e-10);
  CHECK(b2.eigenvalues[1] >= -1e-10);
}

TEST_CASE("isotropic data") {
  Tensor x({4, 2}, {1, 0, -1, 0, 0, 1, 0, -1});
  PcaBasis b = fit_pca(x, 2);
  CHECK(std::abs(b.eigenvalues[0] - b.eigenvalues[1]) < 1e-12);
  CHECK(reconstruction_error(b, x) < 1e-24);
}

TEST_CASE("power iteration matches a dense eigensolver") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    // anisotropic columns give a well-separated spectrum
    Tensor x = Tensor::randn({50, 20}, rng);
    for (std::size_t r = 0; r < 50; ++r)
      for (std::size_t c = 0; c < 20; ++c) x[r * 20 + c] *= 1.0 + 0.25 * static_cast<double>(c);
    PcaBasis b = fit_pca(x, 5);
    const double ours = reconstruction_error(b, x);
    const double oracle = testing::oracle_subspace_error(x, 5);
    INFO("ours " << ours << " oracle " << oracle);
    CHECK(std::abs(ours - oracle) < 1e-8);
    auto ev = testing::oracle_eigenvalues(x);
    for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(b.eigenvalues[k] - ev[k]) < 1e-8 * ev[0]);
  }
  // unscaled Gaussian data has a crowded spectrum
  Rng rng(11);
  Tensor x = Tensor::randn({50, 20}, rng);
  PcaBasis b = fit_pca(x, 5);
  CHECK(std::abs(reconstruction_error(b, x) - testing::oracle_subspace_error(x, 5)) < 1e-8);
}

TEST_CASE("basis invariants") {
  Rng rng(3);
  Tensor x = Tensor::randn({40, 12}, rng);
  for (std::size_t r = 0; r < 40; ++r) x[r * 12] *= 3.0;
  PcaBasis b = fit_pca(x, 12);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 12; ++k) s += b.components[i * 12 + k] * b.components[j * 12 + k];
      CHECK(std::abs(s - (i == j ? 1.0 : 0.0)) < 1e-8);
    }
  for (std::size_t k = 0; k < 12; ++k) {
    CHECK(b.eigenvalues[k] >= -1e-10);
    if (k) CHECK(b.eigenvalues[k] <= b.eigenvalues[k - 1]);
  }
  // complete basis: project then reconstruct is the identity
  Tensor back = reconstruct(b, project(b, x).payload);
  for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(std::abs(back[i] - x[i]) < 1e-8);
  // the mean projects to zero
  Tensor mean({1, 12}, b.mean.data);
  CHECK(max_abs(project(b, mean).payload) < 1e-12);

  // error is non-increasing in n
  double prev = 1e300;
  for (std::size_t n = 1; n <= 12; ++n) {
    const double e = reconstruction_error(fit_pca(x, n), x);
    CHECK(e <= prev + 1e-15);
    prev = e;
  }

  // projected training coordinates are uncorrelated
  Tensor z = project(b, x).payload;
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      double cij = 0.0, cii = 0.0, cjj = 0.0;
      for (std::size_t r = 0; r < 40; ++r) {
        cij += z[r * 12 + i] * z[r * 12 + j];
        cii += z[r * 12 + i] * z[r * 12 + i];
        cjj += z[r * 12 + j] * z[r * 12 + j];
      }
      CHECK(std::abs(cij) < 1e-6 * std::sqrt(cii * cjj));
    }
}

TEST_CASE("pca errors") {
  Tensor x({5, 3}, 1.0);
  CHECK_THROWS_AS(fit_pca(x, 4), Error);
  CHECK_THROWS_AS(fit_pca(x, 0), Error);
  PcaBasis b = fit_pca(x, 2);
  CHECK_THROWS_AS(project(b, Tensor({2, 4})), ShapeError);
}

TEST_CASE("random projection") {
  RandomProjection a(784, 16, 5), b(784, 16, 5), c(784, 16, 6);
  CHECK(a.matrix().data == b.matrix().data);
  CHECK(a.matrix().data != c.matrix().data);
  CHECK(a.matrix().shape == Shape{16, 784});
  double ss = 0.0;
  for (double v : a.matrix().data) ss += v * v;
  CHECK(ss / static_cast<double>(a.matrix().size()) == doctest::Approx(1.0 / 784).epsilon(0.1));
  CHECK(max_abs(project(a, Tensor({3, 1, 28, 28}, 0.0)).payload) == 0.0);
  CHECK(project(a, Tensor({3, 1, 28, 28}, 1.0)).kind == RepresentationKind::rp);
  CHECK_THROWS_AS(project(a, Tensor({3, 10})), ShapeError);
}

TEST_CASE("heads train on a frozen source") {
  // two classes that differ in the mean of the left half of a 4x4 image
  auto make = [](std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    data::Dataset d{"toy", Tensor::uniform({n, 1, 4, 4}, rng, -0.5, 0.5), {}, data::Split::train};
    for (std::size_t i = 0; i < n; ++i) {
      d.labels.push_back(i % 2);
      for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 2; ++c) d.images[i * 16 + r * 4 + c] += i % 2 ? 0.4 : -0.4;
    }
    return d;
  };
  auto train = make(200, 1), test = make(100, 2);
  RandomProjection rp(16, 4, 3);
  FrozenProjection src = frozen(rp);
  const Tensor before = src.matrix.value;
  HeadOptions o;
  o.epochs = 10;
  o.batch_size = 20;
  o.step_size = 1e-2;
  HeadResult cls = train_head(src, HeadKind::classifier, train, test, o);
  CHECK(cls.epochs.size() == 10);
  CHECK(cls.best_accuracy > 0.6);
  CHECK(src.matrix.value.data == before.data);
  CHECK(max_abs(src.matrix.grad) == 0.0);

  PcaBasis b = fit_pca(train.images, 16);
  FrozenProjection full = frozen(b);
  HeadResult dec = train_head(full, HeadKind::decoder, train, test, o);
  CHECK(dec.epochs.front().test_mse > dec.best_mse);
  CHECK(max_abs(full.matrix.grad) == 0.0);
  CHECK(full.matrix.value.data == b.components.data);

  // same options give the same run
  HeadResult again = train_head(src, HeadKind::classifier, train, test, o);
  for (std::size_t e = 0; e < 10; ++e) CHECK(again.epochs[e].train_loss == cls.epochs[e].train_loss);
}
