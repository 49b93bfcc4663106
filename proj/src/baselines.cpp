#include "cre/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cre/kernels.hpp"
#include "cre/losses.hpp"

namespace cre::baselines {

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double normalize(std::vector<double>& v) {
  const double norm = std::sqrt(dot(v.data(), v.data(), v.size()));
  if (norm > 0.0) {
    for (auto& x : v) x /= norm;
  }
  return norm;
}

// Removes the components along every vector of `basis`.
void orthogonalize(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
  for (const auto& b : basis) {
    const double c = dot(v.data(), b.data(), v.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * b[i];
  }
}

void symv(const std::vector<double>& a, const std::vector<double>& x, std::vector<double>& y) {
  const std::size_t d = x.size();
  for (std::size_t i = 0; i < d; ++i) y[i] = dot(a.data() + i * d, x.data(), d);
}

Tensor flatten_rows(const Tensor& t, const char* what) {
  if (t.rank() < 2) throw ShapeError(std::string(what) + ": expected [N, ...], got " + to_string(t.shape));
  return Tensor({t.dim(0), t.size() / t.dim(0)}, t.data);
}

Representation linear_map(RepresentationKind kind, const Tensor& matrix, const Tensor* mean, const Tensor& images) {
  const std::size_t n = matrix.dim(0), d = matrix.dim(1);
  if (images.rank() < 2 || images.size() / images.dim(0) != d) {
    throw ShapeError("project: expected images with " + std::to_string(d) + " values each, got " +
                     to_string(images.shape));
  }
  const std::size_t N = images.dim(0);
  Tensor x({N, d}, images.data);
  if (mean) {
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t j = 0; j < d; ++j) x[r * d + j] -= (*mean)[j];
  }
  Representation out{kind, Tensor({N, n}, 0.0)};
  kernels::gemm_nt(x.data.data(), matrix.data.data(), out.payload.data.data(), N, d, n);
  return out;
}

}  // namespace

PcaBasis fit_pca(const Tensor& data, std::size_t n, const PcaOptions& options) {
  const Tensor x = flatten_rows(data, "fit_pca");
  const std::size_t N = x.dim(0), d = x.dim(1);
  if (n == 0) throw Error("fit_pca: n must be at least 1");
  if (n > d) throw Error("fit_pca: n = " + std::to_string(n) + " exceeds dimension " + std::to_string(d));
  if (N < n) throw Error("fit_pca: " + std::to_string(N) + " samples cannot give " + std::to_string(n) + " components");

  PcaBasis basis;
  basis.mean = Tensor({d}, 0.0);
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t j = 0; j < d; ++j) basis.mean[j] += x[r * d + j];
  for (auto& m : basis.mean.data) m /= static_cast<double>(N);

  Tensor centered = x;
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t j = 0; j < d; ++j) centered[r * d + j] -= basis.mean[j];
  std::vector<double> cov(d * d, 0.0);
  kernels::gemm_tn(centered.data.data(), centered.data.data(), cov.data(), d, N, d);
  const double denom = N > 1 ? static_cast<double>(N - 1) : 1.0;
  for (auto& c : cov) c /= denom;
  const std::vector<double> original = cov;

  std::vector<std::vector<double>> vectors;
  std::vector<double> values;
  Rng rng(mix_seed(d, n));
  std::normal_distribution<double> normal;
  std::vector<double> w(d);
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> v(d);
    for (auto& e : v) e = normal(rng);
    orthogonalize(v, vectors);
    normalize(v);
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
      symv(cov, v, w);
      orthogonalize(w, vectors);
      if (normalize(w) == 0.0) break;  // remaining spectrum is zero; any orthogonal v will do
      // sine of the angle between successive estimates, sign-insensitive
      const double c = dot(w.data(), v.data(), d);
      double off = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double r = w[i] - c * v[i];
        off += r * r;
      }
      v.swap(w);
      if (std::sqrt(off) < options.angle_tolerance) break;
    }
    symv(original, v, w);
    const double lambda = dot(v.data(), w.data(), d);
    // deflate: cov -= lambda v v^T
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) cov[i * d + j] -= lambda * v[i] * v[j];
    vectors.push_back(v);
    values.push_back(lambda);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  basis.components = Tensor({n, d});
  for (std::size_t k = 0; k < n; ++k) {
    std::copy(vectors[order[k]].begin(), vectors[order[k]].end(), basis.components.data.begin() + k * d);
    basis.eigenvalues.push_back(values[order[k]]);
  }
  return basis;
}

RandomProjection::RandomProjection(std::size_t d, std::size_t n, std::uint64_t seed) : seed_(seed) {
  if (d == 0 || n == 0) throw Error("RandomProjection: dimensions must be positive");
  Rng rng(seed);
  matrix_ = Tensor::randn({n, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
}

Representation project(const PcaBasis& basis, const Tensor& images) {
  return linear_map(RepresentationKind::pca, basis.components, &basis.mean, images);
}

Representation project(const RandomProjection& rp, const Tensor& images) {
  return linear_map(RepresentationKind::rp, rp.matrix(), nullptr, images);
}

Tensor reconstruct(const PcaBasis& basis, const Tensor& codes) {
  const std::size_t n = basis.n(), d = basis.d();
  if (codes.rank() != 2 || codes.dim(1) != n) {
    throw ShapeError("reconstruct: expected [N, " + std::to_string(n) + "], got " + to_string(codes.shape));
  }
  const std::size_t N = codes.dim(0);
  Tensor out({N, d});
  for (std::size_t r = 0; r < N; ++r) std::copy(basis.mean.data.begin(), basis.mean.data.end(), out.data.begin() + r * d);
  kernels::gemm_nn(codes.data.data(), basis.components.data.data(), out.data.data(), N, n, d);
  return out;
}

double reconstruction_error(const PcaBasis& basis, const Tensor& data) {
  const Tensor back = reconstruct(basis, project(basis, data).payload);
  double s = 0.0;
  for (std::size_t i = 0; i < back.size(); ++i) {
    const double e = back[i] - data[i];
    s += e * e;
  }
  return s / static_cast<double>(back.size());
}

FrozenProjection frozen(const PcaBasis& basis) {
  return {RepresentationKind::pca, basis.mean, nn::Parameter(basis.components, false)};
}

FrozenProjection frozen(const RandomProjection& rp) {
  return {RepresentationKind::rp, Tensor({rp.d()}, 0.0), nn::Parameter(rp.matrix(), false)};
}

nn::LayerStack make_head(HeadKind kind, std::size_t n, const ImageShape& image, std::uint64_t seed) {
  ModelSpec spec;
  spec.family = Family::fc;
  spec.size = ModelSize::small;
  spec.n = n;
  spec.image = image;
  spec.seed = seed;
  auto model = build_cre(spec);
  return kind == HeadKind::classifier ? std::move(model->classifier) : std::move(model->decoder);
}

namespace {

struct HeadStep {
  double loss = 0.0;
  std::size_t hits = 0;
  double squared_error = 0.0;
};

HeadStep run_head(FrozenProjection& source, nn::LayerStack& head, HeadKind kind, const data::Batch& batch,
                  bool training, Rng& rng, nn::Adam* adam) {
  Graph g;
  nn::ForwardContext ctx(g, training, rng);
  ctx.set_track_grads(training);
  const std::size_t B = batch.labels.size(), d = source.d();
  Var x = ctx.constant(Tensor({B, d}, batch.images.data));
  Var z = ops::matmul(ops::sub(x, ctx.constant(source.mean)), ctx.bind(source.matrix), false, true);
  Var out = head.forward(z, ctx);
  Var images = ctx.constant(batch.images);
  Var loss = kind == HeadKind::classifier ? nn::cross_entropy_loss(out, batch.labels) : nn::mse_loss(out, images);
  HeadStep r;
  r.loss = loss.value().item();
  if (kind == HeadKind::classifier) {
    const Tensor& logits = out.value();
    const std::size_t K = logits.dim(1);
    for (std::size_t b = 0; b < B; ++b) {
      const auto row = logits.data.begin() + static_cast<std::ptrdiff_t>(b * K);
      const auto arg = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(K)) - row);
      r.hits += arg == batch.labels[b];
    }
  } else {
    r.squared_error = r.loss * static_cast<double>(batch.images.size());
  }
  if (training) {
    auto grads = g.backward(loss);
    ctx.accumulate_grads(grads);
    adam->step();
    adam->zero_grad();
  }
  return r;
}

}  // namespace

HeadResult train_head(FrozenProjection& source, HeadKind kind, const data::Dataset& train, const data::Dataset& test,
                      const HeadOptions& o) {
  if (train.image().pixels() != source.d() || test.image().pixels() != source.d()) {
    throw ShapeError("train_head: image size does not match the projection dimension " + std::to_string(source.d()));
  }
  HeadResult result;
  result.kind = kind;
  result.head = make_head(kind, source.n(), train.image(), o.seed);
  result.best_mse = std::numeric_limits<double>::infinity();
  nn::Adam adam(result.head.trainable(), {.step_size = o.step_size});
  Rng rng(mix_seed(o.seed, 1));
  for (std::size_t epoch = 1; epoch <= o.epochs; ++epoch) {
    HeadEpoch row;
    row.epoch = epoch;
    double loss = 0.0;
    for (const auto& idx : data::batch_iter(train.size(), o.batch_size, mix_seed(o.seed, epoch))) {
      loss += run_head(source, result.head, kind, data::gather(train, idx), true, rng, &adam).loss *
              static_cast<double>(idx.size());
    }
    row.train_loss = loss / static_cast<double>(train.size());
    std::size_t hits = 0;
    double se = 0.0;
    for (const auto& idx : data::batch_iter(test.size(), 500, std::nullopt)) {
      const HeadStep s = run_head(source, result.head, kind, data::gather(test, idx), false, rng, nullptr);
      hits += s.hits;
      se += s.squared_error;
    }
    if (kind == HeadKind::classifier) {
      row.test_accuracy = static_cast<double>(hits) / static_cast<double>(test.size());
      result.best_accuracy = std::max(result.best_accuracy, row.test_accuracy);
    } else {
      row.test_mse = se / static_cast<double>(test.images.size());
      result.best_mse = std::min(result.best_mse, row.test_mse);
    }
    result.epochs.push_back(row);
  }
  return result;
}

}  // namespace cre::baselines
