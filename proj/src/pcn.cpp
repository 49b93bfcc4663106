#include "cre/pcn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cre/kernels.hpp"

namespace cre::pcn {

namespace {

double phi(Activation a, double v) { return a == Activation::tanh ? std::tanh(v) : v; }

double phi_prime(Activation a, double v) {
  if (a == Activation::identity) return 1.0;
  const double t = std::tanh(v);
  return 1.0 - t * t;
}

Tensor apply_phi(Activation a, const Tensor& x) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = phi(a, x[i]);
  return out;
}

void check_rows(const Tensor& t, std::size_t width, const char* what) {
  if (t.rank() != 2 || t.dim(1) != width) {
    throw ShapeError(std::string("pcn: ") + what + " must be [B, " + std::to_string(width) + "], got " +
                     to_string(t.shape));
  }
}

}  // namespace

Model::Model(Config config, std::uint64_t seed) : config_(std::move(config)) {
  if (config_.sizes.size() < 2) throw Error("pcn: need at least two layers");
  for (auto d : config_.sizes) {
    if (d == 0) throw Error("pcn: layer sizes must be positive");
  }
  Rng rng(seed);
  for (std::size_t l = 1; l < config_.sizes.size(); ++l) {
    const std::size_t below = config_.sizes[l - 1], here = config_.sizes[l];
    weights.push_back(Tensor::randn({below, here}, rng, 1.0 / std::sqrt(static_cast<double>(here))));
  }
}

State make_state(const Model& m, std::size_t batch) {
  State s;
  s.batch = batch;
  for (auto d : m.config().sizes) s.x.emplace_back(Shape{batch, d}, 0.0);
  s.u.resize(s.x.size());
  s.e.resize(s.x.size());
  s.clamped.assign(s.x.size(), false);
  refresh(m, s);
  return s;
}

void refresh(const Model& m, State& s) {
  const auto& sizes = m.config().sizes;
  for (std::size_t l = 1; l < s.x.size(); ++l) {
    Tensor& u = s.u[l - 1];
    u = Tensor({s.batch, sizes[l - 1]}, 0.0);
    const Tensor f = apply_phi(m.config().activation, s.x[l]);
    // u_{l-1} = phi(x_l) W_l^T in row form
    kernels::gemm_nt(f.data.data(), m.weights[l - 1].data.data(), u.data.data(), s.batch, sizes[l], sizes[l - 1]);
    Tensor& e = s.e[l - 1];
    e = Tensor(u.shape);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = s.x[l - 1][i] - u[i];
  }
}

double energy(const State& s) {
  double total = 0.0;
  for (const auto& e : s.e) {
    for (double v : e.data) total += v * v;
  }
  return 0.5 * total;
}

std::vector<Tensor> activity_gradients(const Model& m, const State& s) {
  const auto& sizes = m.config().sizes;
  const std::size_t L = m.depth();
  std::vector<Tensor> grads;
  for (std::size_t l = 0; l <= L; ++l) {
    Tensor g = l < L ? s.e[l] : Tensor({s.batch, sizes[l]}, 0.0);
    if (l >= 1) {
      // - phi'(x_l) * (e_{l-1} W_l)
      Tensor back({s.batch, sizes[l]}, 0.0);
      kernels::gemm_nn(s.e[l - 1].data.data(), m.weights[l - 1].data.data(), back.data.data(), s.batch,
                       sizes[l - 1], sizes[l]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= phi_prime(m.config().activation, s.x[l][i]) * back[i];
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

std::vector<Tensor> weight_gradients(const Model& m, const State& s) {
  const auto& sizes = m.config().sizes;
  std::vector<Tensor> grads;
  for (std::size_t l = 1; l <= m.depth(); ++l) {
    // -e_{l-1}^T phi(x_l)
    Tensor g({sizes[l - 1], sizes[l]}, 0.0);
    const Tensor f = apply_phi(m.config().activation, s.x[l]);
    kernels::gemm_tn(s.e[l - 1].data.data(), f.data.data(), g.data.data(), sizes[l - 1], s.batch, sizes[l]);
    for (auto& v : g.data) v = -v;
    grads.push_back(std::move(g));
  }
  return grads;
}

State prepare(const Model& m, Mode mode, const Tensor& value) {
  const std::size_t layer = mode == Mode::classify ? 0 : m.depth();
  check_rows(value, m.config().sizes[layer], mode == Mode::classify ? "input" : "top activity");
  State s = make_state(m, value.dim(0));
  s.x[layer] = value;
  s.clamped[layer] = true;
  refresh(m, s);
  return s;
}

Trace infer(const Model& m, State& s) {
  const Config& c = m.config();
  Trace trace;
  double e_prev = energy(s);
  trace.energy.push_back(e_prev);
  std::size_t rising = 0;
  for (std::size_t it = 0; it < c.iterations; ++it) {
    const auto grads = activity_gradients(m, s);
    for (std::size_t l = 0; l < s.x.size(); ++l) {
      if (s.clamped[l]) continue;
      for (std::size_t i = 0; i < s.x[l].size(); ++i) s.x[l][i] -= c.step * grads[l][i];
    }
    refresh(m, s);
    const double e_now = energy(s);
    if (!std::isfinite(e_now)) throw DivergenceError("pcn: energy became non-finite at step " + std::to_string(it + 1));
    trace.energy.push_back(e_now);
    ++trace.steps;
    rising = e_now > e_prev ? rising + 1 : 0;
    if (rising >= c.divergence_window) {
      throw DivergenceError("pcn: energy rose for " + std::to_string(rising) + " consecutive steps (step " +
                            std::to_string(it + 1) + ", E = " + std::to_string(e_now) + ", step size " +
                            std::to_string(c.step) + ")");
    }
    if (std::abs(e_now - e_prev) < c.tolerance) {
      trace.converged = true;
      break;
    }
    e_prev = e_now;
  }
  return trace;
}

std::vector<std::size_t> classify(const Model& m, const Tensor& inputs) {
  State s = prepare(m, Mode::classify, inputs);
  infer(m, s);
  const Tensor& top = s.x.back();
  const std::size_t k = top.dim(1);
  std::vector<std::size_t> out(s.batch);
  for (std::size_t b = 0; b < s.batch; ++b) {
    const auto row = top.data.begin() + static_cast<std::ptrdiff_t>(b * k);
    out[b] = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(k)) - row);
  }
  return out;
}

Tensor generate(const Model& m, const Tensor& top) {
  State s = prepare(m, Mode::generate, top);
  infer(m, s);
  return s.x.front();
}

std::vector<double> learn(Model& m, const Tensor& inputs, const Tensor& targets, const LearnOptions& o) {
  const auto& sizes = m.config().sizes;
  check_rows(inputs, sizes.front(), "input");
  check_rows(targets, sizes.back(), "target");
  if (inputs.dim(0) != targets.dim(0)) throw ShapeError("pcn: input and target counts differ");
  if (o.batch_size == 0) throw Error("pcn: batch size must be positive");
  const std::size_t n = inputs.dim(0), d0 = sizes.front(), dl = sizes.back();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(o.seed);
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < o.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += o.batch_size) {
      const std::size_t b = std::min(o.batch_size, n - start);
      State s = make_state(m, b);
      for (std::size_t i = 0; i < b; ++i) {
        std::copy_n(inputs.data.begin() + order[start + i] * d0, d0, s.x.front().data.begin() + i * d0);
        std::copy_n(targets.data.begin() + order[start + i] * dl, dl, s.x.back().data.begin() + i * dl);
      }
      s.clamped.front() = s.clamped.back() = true;
      refresh(m, s);
      infer(m, s);
      total += energy(s);
      const auto grads = weight_gradients(m, s);
      const double scale = o.learning_rate / static_cast<double>(b);
      for (std::size_t l = 0; l < grads.size(); ++l) {
        for (std::size_t i = 0; i < grads[l].size(); ++i) m.weights[l][i] -= scale * grads[l][i];
      }
    }
    history.push_back(total / static_cast<double>(n));
  }
  return history;
}

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  Tensor t({labels.size(), classes}, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw Error("one_hot: label out of range");
    t[i * classes + labels[i]] = 1.0;
  }
  return t;
}

}  // namespace cre::pcn
