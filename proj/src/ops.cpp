#include "cre/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "cre/kernels.hpp"

namespace cre::ops {
namespace {

using Inputs = std::span<const Tensor* const>;
using GradInputs = std::span<Tensor* const>;

Var emit(std::unique_ptr<Op> op, std::initializer_list<Var> inputs) {
  std::vector<Var> in(inputs);
  return in.front().graph->record(std::move(op), in);
}

Var emit(std::unique_ptr<Op> op, const std::vector<Var>& inputs) {
  return inputs.front().graph->record(std::move(op), inputs);
}

[[noreturn]] void shape_error(OpKind kind, const Shape& a, const Shape& b, const std::string& what = "") {
  throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + to_string(a) + " vs " + to_string(b) +
                   (what.empty() ? "" : " (" + what + ")"));
}

// ---------------------------------------------------------------- matmul

class MatmulOp final : public Op {
 public:
  MatmulOp(bool ta, bool tb) : ta_(ta), tb_(tb) {}
  OpKind kind() const override { return OpKind::matmul; }

  void forward(Inputs in, Tensor& out) override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    if (a.rank() < 2 || b.rank() < 2) shape_error(kind(), a.shape, b.shape, "rank < 2");
    if (ta_ && tb_) throw ShapeError("matmul: transposing both operands is not supported");
    const std::size_t ar = a.shape[a.rank() - 2], ac = a.shape[a.rank() - 1];
    const std::size_t br = b.shape[b.rank() - 2], bc = b.shape[b.rank() - 1];
    m_ = ta_ ? ac : ar;
    k_ = ta_ ? ar : ac;
    const std::size_t kb = tb_ ? bc : br;
    n_ = tb_ ? br : bc;
    if (k_ != kb) shape_error(kind(), a.shape, b.shape, "inner dimensions");
    const std::size_t lead = a.size() / (ar * ac);
    shared_b_ = b.rank() == 2;
    if (!shared_b_) {
      if (b.rank() != a.rank() || !std::equal(a.shape.begin(), a.shape.end() - 2, b.shape.begin())) {
        shape_error(kind(), a.shape, b.shape, "batch axes");
      }
    }
    batch_ = lead;
    Shape s(a.shape.begin(), a.shape.end() - 2);
    s.push_back(m_);
    s.push_back(n_);
    out = Tensor(std::move(s), 0.0);
    if (shared_b_ && !ta_) {
      // leading axes fold into rows
      run_forward(a.data.data(), b.data.data(), out.data.data(), m_ * batch_);
      return;
    }
    for (std::size_t i = 0; i < batch_; ++i) {
      const double* bp = b.data.data() + (shared_b_ ? 0 : i * k_ * n_);
      run_forward(a.data.data() + i * m_ * k_, bp, out.data.data() + i * m_ * n_, m_);
    }
  }

  void backward(Inputs in, const Tensor&, const Tensor& g, GradInputs gin) override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    if (shared_b_ && !ta_) {
      run_backward(a.data.data(), b.data.data(), g.data.data(), gin[0] ? gin[0]->data.data() : nullptr,
                   gin[1] ? gin[1]->data.data() : nullptr, m_ * batch_);
      return;
    }
    for (std::size_t i = 0; i < batch_; ++i) {
      const std::size_t bo = shared_b_ ? 0 : i * k_ * n_;
      run_backward(a.data.data() + i * m_ * k_, b.data.data() + bo, g.data.data() + i * m_ * n_,
                   gin[0] ? gin[0]->data.data() + i * m_ * k_ : nullptr,
                   gin[1] ? gin[1]->data.data() + bo : nullptr, m_);
    }
  }

 private:
  void run_forward(const double* a, const double* b, double* c, std::size_t m) const {
    if (!ta_ && !tb_) kernels::gemm_nn(a, b, c, m, k_, n_);
    else if (!ta_) kernels::gemm_nt(a, b, c, m, k_, n_);
    else kernels::gemm_tn(a, b, c, m, k_, n_);
  }

  void run_backward(const double* a, const double* b, const double* g, double* ga, double* gb,
                    std::size_t m) const {
    if (!ta_ && !tb_) {
      if (ga) kernels::gemm_nt(g, b, ga, m, n_, k_);
      if (gb) kernels::gemm_tn(a, g, gb, k_, m, n_);
    } else if (!ta_) {
      if (ga) kernels::gemm_nn(g, b, ga, m, n_, k_);
      if (gb) kernels::gemm_tn(g, a, gb, n_, m, k_);
    } else {
      if (ga) kernels::gemm_nt(b, g, ga, k_, n_, m);
      if (gb) kernels::gemm_nn(a, g, gb, k_, m, n_);
    }
  }

  bool ta_, tb_;
  bool shared_b_ = true;
  std::size_t batch_ = 1, m_ = 0, k_ = 0, n_ = 0;
};

// ---------------------------------------------------------------- elementwise binary

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

enum class Binary { add, sub, mul };

class BinaryOp final : public Op {
 public:
  explicit BinaryOp(Binary which) : which_(which) {}
  OpKind kind() const override {
    switch (which_) {
      case Binary::add: return OpKind::add;
      case Binary::sub: return OpKind::sub;
      case Binary::mul: return OpKind::mul;
    }
    return OpKind::add;
  }

  void forward(Inputs in, Tensor& out) override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    if (!is_suffix(a.shape, b.shape)) shape_error(kind(), a.shape, b.shape);
    out = Tensor(a.shape);
    const std::size_t bs = b.size();
    for (std::size_t i = 0, j = 0; i < a.size(); ++i, j = (j + 1 == bs ? 0 : j + 1)) {
      switch (which_) {
        case Binary::add: out.data[i] = a.data[i] + b.data[j]; break;
        case Binary::sub: out.data[i] = a.data[i] - b.data[j]; break;
        case Binary::mul: out.data[i] = a.data[i] * b.data[j]; break;
      }
    }
  }

  void backward(Inputs in, const Tensor&, const Tensor& g, GradInputs gin) override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    const std::size_t bs = b.size();
    if (gin[0]) {
      auto& ga = gin[0]->data;
      for (std::size_t i = 0, j = 0; i < a.size(); ++i, j = (j + 1 == bs ? 0 : j + 1)) {
        ga[i] += which_ == Binary::mul ? g.data[i] * b.data[j] : g.data[i];
      }
    }
    if (gin[1]) {
      auto& gb = gin[1]->data;
      for (std::size_t i = 0, j = 0; i < a.size(); ++i, j = (j + 1 == bs ? 0 : j + 1)) {
        switch (which_) {
          case Binary::add: gb[j] += g.data[i]; break;
          case Binary::sub: gb[j] -= g.data[i]; break;
          case Binary::mul: gb[j] += g.data[i] * a.data[i]; break;
        }
      }
    }
  }

 private:
  Binary which_;
};

// ---------------------------------------------------------------- elementwise unary

class ScaleOp final : public Op {
 public:
  ScaleOp(double factor, bool gradient_only) : factor_(factor), gradient_only_(gradient_only) {}
  OpKind kind() const override { return gradient_only_ ? OpKind::grad_scale : OpKind::scale; }
  void forward(Inputs in, Tensor& out) override {
    out = *in[0];
    if (!gradient_only_) {
      for (auto& v : out.data) v *= factor_;
    }
  }
  void backward(Inputs, const Tensor&, const Tensor& g, GradInputs gin) override {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) gin[0]->data[i] += factor_ * g.data[i];
  }

 private:
  double factor_;
  bool gradient_only_;
};

enum class Unary { square, relu, tanh, gelu };

class UnaryOp final : public Op {
 public:
  explicit UnaryOp(Unary which) : which_(which) {}
  OpKind kind() const override {
    switch (which_) {
      case Unary::square: return OpKind::square;
      case Unary::relu: return OpKind::relu;
      case Unary::tanh: return OpKind::tanh;
      case Unary::gelu: return OpKind::gelu;
    }
    return OpKind::relu;
  }

  void forward(Inputs in, Tensor& out) override {
    const Tensor& x = *in[0];
    out = Tensor(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x.data[i];
      switch (which_) {
        case Unary::square: out.data[i] = v * v; break;
        case Unary::relu: out.data[i] = v > 0.0 ? v : 0.0; break;
        case Unary::tanh: out.data[i] = std::tanh(v); break;
        case Unary::gelu: out.data[i] = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); break;
      }
    }
  }

  void backward(Inputs in, const Tensor& y, const Tensor& g, GradInputs gin) override {
    if (!gin[0]) return;
    const Tensor& x = *in[0];
    auto& gx = gin[0]->data;
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x.data[i];
      double d = 0.0;
      switch (which_) {
        case Unary::square: d = 2.0 * v; break;
        case Unary::relu: d = v > 0.0 ? 1.0 : 0.0; break;
        case Unary::tanh: d = 1.0 - y.data[i] * y.data[i]; break;
        case Unary::gelu:
          d = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
          break;
      }
      gx[i] += d * g.data[i];
    }
  }

 private:
  Unary which_;
};

// ---------------------------------------------------------------- reductions

class ReduceOp final : public Op {
 public:
  explicit ReduceOp(bool average) : average_(average) {}
  OpKind kind() const override { return average_ ? OpKind::mean : OpKind::sum; }
  void forward(Inputs in, Tensor& out) override {
    const Tensor& x = *in[0];
    if (x.size() == 0) throw ShapeError(std::string(op_name(kind())) + ": empty input");
    double s = 0.0;
    for (double v : x.data) s += v;
    out = Tensor::scalar(average_ ? s / static_cast<double>(x.size()) : s);
  }
  void backward(Inputs in, const Tensor&, const Tensor& g, GradInputs gin) override {
    if (!gin[0]) return;
    const double d = average_ ? g.data[0] / static_cast<double>(in[0]->size()) : g.data[0];
    for (auto& v : gin[0]->data) v += d;
  }

 private:
  bool average_;
};

class MeanAxisOp final : public Op {
 public:
  explicit MeanAxisOp(std::size_t axis) : axis_(axis) {}
  OpKind kind() const override { return OpKind::mean_over_axis; }
  void forward(Inputs in, Tensor& out) override {
    const Tensor& x = *in[0];
    if (axis_ >= x.rank()) throw ShapeError("mean_over_axis: axis out of range for " + to_string(x.shape));
    split(x.shape);
    Shape s = x.shape;
    s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis_));
    out = Tensor(std::move(s), 0.0);
    const double inv = 1.0 / static_cast<double>(len_);
    for (std::size_t o = 0; o < outer_; ++o) {
      for (std::size_t a = 0; a < len_; ++a) {
        const double* src = x.data.data() + (o * len_ + a) * inner_;
        double* dst = out.data.data() + o * inner_;
        for (std::size_t i = 0; i < inner_; ++i) dst[i] += src[i];
      }
      for (std::size_t i = 0; i < inner_; ++i) out.data[o * inner_ + i] *= inv;
    }
  }
  void backward(Inputs, const Tensor&, const Tensor& g, GradInputs gin) override {
    if (!gin[0]) return;
    const double inv = 1.0 / static_cast<double>(len_);
    for (std::size_t o = 0; o < outer_; ++o) {
      for (std::size_t a = 0; a < len_; ++a) {
        double* dst = gin[0]->data.data() + (o * len_ + a) * inner_;
        const double* src = g.data.data() + o * inner_;
        for (std::size_t i = 0; i < inner_; ++i) dst[i] += src[i] * inv;
      }
    }
  }

 private:
  void split(const Shape& s) {
    outer_ = 1;
    inner_ = 1;
    for (std::size_t i = 0; i < axis_; ++i) outer_ *= s[i];
    for (std::size_t i = axis_ + 1; i < s.size(); ++i) inner_ *= s[i];
    len_ = s[axis_];
  }
  std::size_t axis_, outer_ = 1, len_ = 1, inner_ = 1;
};

// ---------------------------------------------------------------- softmax family

class SoftmaxOp final : public Op {
 public:
  explicit SoftmaxOp(bool log) : log_(log) {}
  OpKind kind() const override { return log_ ? OpKind::log_softmax : OpKind::softmax; }
  void forward(Inputs in, Tensor& out) override {
    const Tensor& x = *in[0];
    if (x.rank() == 0) throw ShapeError("softmax: scalar input");
    const std::size_t d = x.shape.back();
    const std::size_t rows = x.size() / d;
    out = Tensor(x.shape);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* src = x.data.data() + r * d;
      double* dst = out.data.data() + r * d;
      const double mx = *std::max_element(src, src + d);
      double z = 0.0;
      for (std::size_t i = 0; i < d; ++i) z += std::exp(src[i] - mx);
      if (log_) {
        const double lz = std::log(z) + mx;
        for (std::size_t i = 0; i < d; ++i) dst[i] = src[i] - lz;
      } else {
        for (std::size_t i = 0; i < d; ++i) dst[i] = std::exp(src[i] - mx) / z;
      }
    }
  }
  void backward(Inputs, const Tensor& y, const Tensor& g, GradInputs gin) override {
    if (!gin[0]) return;
    const std::size_t d = y.shape.back();
    const std::size_t rows = y.size() / d;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yy = y.data.data() + r * d;
      const double* gg = g.data.data() + r * d;
      double* gx = gin[0]->data.data() + r * d;
      if (log_) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += gg[i];
        for (std::size_t i = 0; i < d; ++i) gx[i] += gg[i] - std::exp(yy[i]) * s;
      } else {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += gg[i] * yy[i];
        for (std::size_t i = 0; i < d; ++i) gx[i] += yy[i] * (gg[i] - s);
      }
    }
  }

 private:
  bool log_;
};

// ---------------------------------------------------------------- normalization

class LayerNormOp final : public Op {
 public:
  explicit LayerNormOp(double eps) : eps_(eps) {}
  OpKind kind() const override { return OpKind::layer_norm; }
  void forward(Inputs in, Tensor& out) override {
    const Tensor& x = *in[0];
    const Tensor& gain = *in[1];
    const Tensor& bias = *in[2];
    if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
    const std::size_t d = x.shape.back();
    if (gain.size() != d || bias.size() != d) shape_error(kind(), x.shape, gain.shape, "gain/bias");
    const std::size_t rows = x.size() / d;
    out = Tensor(x.shape);
    xhat_ = Tensor(x.shape);
    inv_std_.assign(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* src = x.data.data() + r * d;
      double mu = 0.0;
      for (std::size_t i = 0; i < d; ++i) mu += src[i];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t i = 0; i < d; ++i) var += (src[i] - mu) * (src[i] - mu);
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + eps_);
      inv_std_[r] = inv;
      for (std::size_t i = 0; i < d; ++i) {
        const double h = (src[i] - mu) * inv;
        xhat_.data[r * d + i] = h;
        out.data[r * d + i] = h * gain.data[i] + bias.data[i];
      }
    }
  }
  void backward(Inputs in, const Tensor&, const Tensor& g, GradInputs gin) override {
    const Tensor& gain = *in[1];
    const std::size_t d = g.shape.back();
    const std::size_t rows = g.size() / d;
    std::vector<double> dh(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gg = g.data.data() + r * d;
      const double* h = xhat_.data.data() + r * d;
      if (gin[1]) {
        for (std::size_t i = 0; i < d; ++i) gin[1]->data[i] += gg[i] * h[i];
      }
      if (gin[2]) {
        for (std::size_t i = 0; i < d; ++i) gin[2]->data[i] += gg[i];
      }
      if (gin[0]) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          dh[i] = gg[i] * gain.data[i];
          s1 += dh[i];
          s2 += dh[i] * h[i];
        }
        const double k = inv_std_[r] / static_cast<double>(d);
        double* gx = gin[0]->data.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) {
          gx[i] += k * (static_cast<double>(d) * dh[i] - s1 - h[i] * s2);
        }
      }
    }
  }

 private:
  double eps_;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

struct ChannelLayout {
  std::size_t n = 0, c = 0, spatial = 1;
};

ChannelLayout channel_layout(const Shape& s) {
  if (s.size() < 2) throw ShapeError("batch_norm: expected [N, C, ...], got " + to_string(s));
  ChannelLayout l{s[0], s[1], 1};
  for (std::size_t i = 2; i < s.size(); ++i) l.spatial *= s[i];
  return l;
}

class BatchNormOp final : public Op {
 public:
  BatchNormOp(bool training, double eps, Tensor running_mean, Tensor running_var)
      : training_(training), eps_(eps), running_mean_(std::move(running_mean)), running_var_(std::move(running_var)) {}
  OpKind kind() const override { return OpKind::batch_norm; }

  void forward(Inputs in, Tensor& out) override {
    const Tensor& x = *in[0];
    const Tensor& gain = *in[1];
    const Tensor& bias = *in[2];
    const auto l = channel_layout(x.shape);
    if (gain.size() != l.c || bias.size() != l.c) shape_error(kind(), x.shape, gain.shape, "gain/bias");
    out = Tensor(x.shape);
    xhat_ = Tensor(x.shape);
    inv_std_.assign(l.c, 0.0);
    const double m = static_cast<double>(l.n * l.spatial);
    for (std::size_t c = 0; c < l.c; ++c) {
      double mu, var;
      if (training_) {
        if (l.n * l.spatial < 2) throw ShapeError("batch_norm: training needs more than one value per channel");
        mu = 0.0;
        for (std::size_t n = 0; n < l.n; ++n) {
          const double* p = x.data.data() + (n * l.c + c) * l.spatial;
          for (std::size_t s = 0; s < l.spatial; ++s) mu += p[s];
        }
        mu /= m;
        var = 0.0;
        for (std::size_t n = 0; n < l.n; ++n) {
          const double* p = x.data.data() + (n * l.c + c) * l.spatial;
          for (std::size_t s = 0; s < l.spatial; ++s) var += (p[s] - mu) * (p[s] - mu);
        }
        var /= m;
      } else {
        mu = running_mean_.data[c];
        var = running_var_.data[c];
      }
      const double inv = 1.0 / std::sqrt(var + eps_);
      inv_std_[c] = inv;
      for (std::size_t n = 0; n < l.n; ++n) {
        const std::size_t off = (n * l.c + c) * l.spatial;
        for (std::size_t s = 0; s < l.spatial; ++s) {
          const double h = (x.data[off + s] - mu) * inv;
          xhat_.data[off + s] = h;
          out.data[off + s] = h * gain.data[c] + bias.data[c];
        }
      }
    }
  }

  void backward(Inputs in, const Tensor&, const Tensor& g, GradInputs gin) override {
    const Tensor& gain = *in[1];
    const auto l = channel_layout(g.shape);
    const double m = static_cast<double>(l.n * l.spatial);
    for (std::size_t c = 0; c < l.c; ++c) {
      double sg = 0.0, sgh = 0.0;
      for (std::size_t n = 0; n < l.n; ++n) {
        const std::size_t off = (n * l.c + c) * l.spatial;
        for (std::size_t s = 0; s < l.spatial; ++s) {
          sg += g.data[off + s];
          sgh += g.data[off + s] * xhat_.data[off + s];
        }
      }
      if (gin[1]) gin[1]->data[c] += sgh;
      if (gin[2]) gin[2]->data[c] += sg;
      if (!gin[0]) continue;
      const double k = gain.data[c] * inv_std_[c];
      for (std::size_t n = 0; n < l.n; ++n) {
        const std::size_t off = (n * l.c + c) * l.spatial;
        for (std::size_t s = 0; s < l.spatial; ++s) {
          if (training_) {
            gin[0]->data[off + s] += k * (g.data[off + s] - sg / m - xhat_.data[off + s] * sgh / m);
          } else {
            gin[0]->data[off + s] += k * g.data[off + s];
          }
        }
      }
    }
  }

 private:
  bool training_;
  double eps_;
  Tensor running_mean_, running_var_;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

// ---------------------------------------------------------------- stochastic masks

class MaskOp final : public Op {
 public:
  MaskOp(OpKind kind, Tensor mask, std::size_t period) : kind_(kind), mask_(std::move(mask)), period_(period) {}
  OpKind kind() const override { return kind_; }
  // mask_[i / period_] scales element i
  void forward(Inputs in, Tensor& out) override {
    const Tensor& x = *in[0];
    out = Tensor(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] * mask_.data[i / period_];
  }
  void backward(Inputs, const Tensor&, const Tensor& g, GradInputs gin) override {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) gin[0]->data[i] += g.data[i] * mask_.data[i / period_];
  }

 private:
  OpKind kind_;
  Tensor mask_;
  std::size_t period_;
};

Tensor keep_mask(std::size_t count, double p, Rng& rng) {
  Tensor mask(Shape{count});
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  for (auto& v : mask.data) v = keep(rng) ? s : 0.0;
  return mask;
}

// ---------------------------------------------------------------- shape ops

class ReshapeOp final : public Op {
 public:
  explicit ReshapeOp(Shape shape) : shape_(std::move(shape)) {}
  OpKind kind() const override { return OpKind::reshape; }
  void forward(Inputs in, Tensor& out) override {
    if (numel(shape_) != in[0]->size()) shape_error(kind(), in[0]->shape, shape_);
    out = Tensor(shape_, in[0]->data);
  }
  void backward(Inputs, const Tensor&, const Tensor& g, GradInputs gin) override {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) gin[0]->data[i] += g.data[i];
  }

 private:
  Shape shape_;
};

class PermuteOp final : public Op {
 public:
  explicit PermuteOp(std::vector<std::size_t> axes) : axes_(std::move(axes)) {}
  OpKind kind() const override { return OpKind::permute; }
  void forward(Inputs in, Tensor& out) override {
    const Tensor& x = *in[0];
    const std::size_t r = x.rank();
    std::vector<bool> seen(r, false);
    if (axes_.size() != r) throw ShapeError("permute: axes do not match rank of " + to_string(x.shape));
    for (auto a : axes_) {
      if (a >= r || seen[a]) throw ShapeError("permute: invalid axes for " + to_string(x.shape));
      seen[a] = true;
    }
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.shape[i];
    Shape s(r);
    for (std::size_t i = 0; i < r; ++i) s[i] = x.shape[axes_[i]];
    out = Tensor(s);
    source_.resize(x.size());
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t o = 0; o < out.size(); ++o) {
      std::size_t src = 0;
      for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_stride[axes_[i]];
      source_[o] = src;
      out.data[o] = x.data[src];
      for (std::size_t i = r; i-- > 0;) {
        if (++idx[i] < s[i]) break;
        idx[i] = 0;
      }
    }
  }
  void backward(Inputs, const Tensor&, const Tensor& g, GradInputs gin) override {
    if (!gin[0]) return;
    for (std::size_t o = 0; o < g.size(); ++o) gin[0]->data[source_[o]] += g.data[o];
  }

 private:
  std::vector<std::size_t> axes_;
  std::vector<std::size_t> source_;
};

class ConcatOp final : public Op {
 public:
  explicit ConcatOp(std::size_t axis) : axis_(axis) {}
  OpKind kind() const override { return OpKind::concat; }
  void forward(Inputs in, Tensor& out) override {
    const Shape& first = in[0]->shape;
    if (axis_ >= first.size()) throw ShapeError("concat: axis out of range for " + to_string(first));
    outer_ = 1;
    inner_ = 1;
    for (std::size_t i = 0; i < axis_; ++i) outer_ *= first[i];
    for (std::size_t i = axis_ + 1; i < first.size(); ++i) inner_ *= first[i];
    Shape s = first;
    s[axis_] = 0;
    lens_.clear();
    for (const Tensor* t : in) {
      if (t->rank() != first.size()) shape_error(kind(), first, t->shape);
      for (std::size_t i = 0; i < first.size(); ++i) {
        if (i != axis_ && t->shape[i] != first[i]) shape_error(kind(), first, t->shape);
      }
      lens_.push_back(t->shape[axis_]);
      s[axis_] += t->shape[axis_];
    }
    out = Tensor(s);
    const std::size_t total = s[axis_];
    for (std::size_t o = 0; o < outer_; ++o) {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        const double* src = in[k]->data.data() + o * lens_[k] * inner_;
        std::copy(src, src + lens_[k] * inner_, out.data.data() + (o * total + offset) * inner_);
        offset += lens_[k];
      }
    }
  }
  void backward(Inputs, const Tensor& y, const Tensor& g, GradInputs gin) override {
    const std::size_t total = y.shape[axis_];
    for (std::size_t o = 0; o < outer_; ++o) {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < gin.size(); ++k) {
        if (gin[k]) {
          const double* src = g.data.data() + (o * total + offset) * inner_;
          double* dst = gin[k]->data.data() + o * lens_[k] * inner_;
          for (std::size_t i = 0; i < lens_[k] * inner_; ++i) dst[i] += src[i];
        }
        offset += lens_[k];
      }
    }
  }

 private:
  std::size_t axis_, outer_ = 1, inner_ = 1;
  std::vector<std::size_t> lens_;
};

// ---------------------------------------------------------------- token ops

void check_token_indices(const std::vector<std::vector<std::size_t>>& idx, std::size_t batch, std::size_t tokens,
                         const char* op) {
  if (idx.size() != batch) throw ShapeError(std::string(op) + ": index list count differs from batch");
  for (const auto& row : idx) {
    if (row.size() != idx.front().size()) throw ShapeError(std::string(op) + ": ragged index lists");
    for (auto t : row) {
      if (t >= tokens) throw ShapeError(std::string(op) + ": token index out of range");
    }
  }
}

class GatherTokensOp final : public Op {
 public:
  explicit GatherTokensOp(std::vector<std::vector<std::size_t>> idx) : idx_(std::move(idx)) {}
  OpKind kind() const override { return OpKind::gather_tokens; }
  void forward(Inputs in, Tensor& out) override {
    const Tensor& x = *in[0];
    if (x.rank() != 3) throw ShapeError("gather_tokens: expected [B, T, D], got " + to_string(x.shape));
    check_token_indices(idx_, x.shape[0], x.shape[1], "gather_tokens");
    const std::size_t t = x.shape[1], d = x.shape[2], k = idx_.front().size();
    out = Tensor(Shape{x.shape[0], k, d});
    for (std::size_t b = 0; b < x.shape[0]; ++b) {
      for (std::size_t j = 0; j < k; ++j) {
        const double* src = x.data.data() + (b * t + idx_[b][j]) * d;
        std::copy(src, src + d, out.data.data() + (b * k + j) * d);
      }
    }
  }
  void backward(Inputs in, const Tensor&, const Tensor& g, GradInputs gin) override {
    if (!gin[0]) return;
    const std::size_t t = in[0]->shape[1], d = in[0]->shape[2], k = idx_.front().size();
    for (std::size_t b = 0; b < idx_.size(); ++b) {
      for (std::size_t j = 0; j < k; ++j) {
        double* dst = gin[0]->data.data() + (b * t + idx_[b][j]) * d;
        const double* src = g.data.data() + (b * k + j) * d;
        for (std::size_t i = 0; i < d; ++i) dst[i] += src[i];
      }
    }
  }

 private:
  std::vector<std::vector<std::size_t>> idx_;
};

class ScatterTokensOp final : public Op {
 public:
  ScatterTokensOp(std::vector<std::vector<std::size_t>> idx, std::size_t tokens)
      : idx_(std::move(idx)), tokens_(tokens) {}
  OpKind kind() const override { return OpKind::scatter_tokens; }
  void forward(Inputs in, Tensor& out) override {
    const Tensor& v = *in[0];
    const Tensor& fill = *in[1];
    if (v.rank() != 3) throw ShapeError("scatter_tokens: expected [B, K, D], got " + to_string(v.shape));
    const std::size_t bsz = v.shape[0], k = v.shape[1], d = v.shape[2];
    if (fill.size() != d) shape_error(kind(), v.shape, fill.shape, "fill token");
    check_token_indices(idx_, bsz, tokens_, "scatter_tokens");
    if (!idx_.empty() && idx_.front().size() != k) throw ShapeError("scatter_tokens: index count differs from K");
    filled_.assign(bsz * tokens_, true);
    out = Tensor(Shape{bsz, tokens_, d});
    for (std::size_t b = 0; b < bsz; ++b) {
      for (std::size_t j = 0; j < k; ++j) filled_[b * tokens_ + idx_[b][j]] = false;
      for (std::size_t t = 0; t < tokens_; ++t) {
        double* dst = out.data.data() + (b * tokens_ + t) * d;
        if (filled_[b * tokens_ + t]) std::copy(fill.data.begin(), fill.data.end(), dst);
      }
      for (std::size_t j = 0; j < k; ++j) {
        const double* src = v.data.data() + (b * k + j) * d;
        std::copy(src, src + d, out.data.data() + (b * tokens_ + idx_[b][j]) * d);
      }
    }
  }
  void backward(Inputs in, const Tensor&, const Tensor& g, GradInputs gin) override {
    const std::size_t bsz = in[0]->shape[0], k = in[0]->shape[1], d = in[0]->shape[2];
    for (std::size_t b = 0; b < bsz; ++b) {
      if (gin[0]) {
        for (std::size_t j = 0; j < k; ++j) {
          const double* src = g.data.data() + (b * tokens_ + idx_[b][j]) * d;
          double* dst = gin[0]->data.data() + (b * k + j) * d;
          for (std::size_t i = 0; i < d; ++i) dst[i] += src[i];
        }
      }
      if (gin[1]) {
        for (std::size_t t = 0; t < tokens_; ++t) {
          if (!filled_[b * tokens_ + t]) continue;
          const double* src = g.data.data() + (b * tokens_ + t) * d;
          for (std::size_t i = 0; i < d; ++i) gin[1]->data[i] += src[i];
        }
      }
    }
  }

 private:
  std::vector<std::vector<std::size_t>> idx_;
  std::size_t tokens_;
  std::vector<bool> filled_;
};

class PickOp final : public Op {
 public:
  explicit PickOp(std::vector<std::size_t> idx) : idx_(std::move(idx)) {}
  OpKind kind() const override { return OpKind::pick; }
  void forward(Inputs in, Tensor& out) override {
    const Tensor& x = *in[0];
    if (x.rank() != 2 || x.shape[0] != idx_.size()) {
      throw ShapeError("pick: expected [" + std::to_string(idx_.size()) + ", K], got " + to_string(x.shape));
    }
    out = Tensor(Shape{idx_.size()});
    for (std::size_t b = 0; b < idx_.size(); ++b) {
      if (idx_[b] >= x.shape[1]) throw ShapeError("pick: index out of range");
      out.data[b] = x.data[b * x.shape[1] + idx_[b]];
    }
  }
  void backward(Inputs in, const Tensor&, const Tensor& g, GradInputs gin) override {
    if (!gin[0]) return;
    const std::size_t k = in[0]->shape[1];
    for (std::size_t b = 0; b < idx_.size(); ++b) gin[0]->data[b * k + idx_[b]] += g.data[b];
  }

 private:
  std::vector<std::size_t> idx_;
};

// ---------------------------------------------------------------- spatial ops

struct Image4 {
  std::size_t n, c, h, w;
  bool batched;
};

Image4 image_layout(const Shape& s, const char* op) {
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  throw ShapeError(std::string(op) + ": expected [N, C, H, W] or [C, H, W], got " + to_string(s));
}

Shape image_shape(const Image4& l, std::size_t c, std::size_t h, std::size_t w) {
  return l.batched ? Shape{l.n, c, h, w} : Shape{c, h, w};
}

class Conv2dOp final : public Op {
 public:
  Conv2dOp(std::size_t stride, std::size_t padding, bool has_bias)
      : stride_(stride), padding_(padding), has_bias_(has_bias) {}
  OpKind kind() const override { return OpKind::conv2d; }

  void forward(Inputs in, Tensor& out) override {
    const Tensor& x = *in[0];
    const Tensor& k = *in[1];
    l_ = image_layout(x.shape, "conv2d");
    if (k.rank() != 4 || k.shape[1] != l_.c) shape_error(kind(), x.shape, k.shape, "kernel channels");
    if (stride_ == 0) throw ShapeError("conv2d: stride must be positive");
    o_ = k.shape[0];
    kh_ = k.shape[2];
    kw_ = k.shape[3];
    if (kh_ > l_.h + 2 * padding_ || kw_ > l_.w + 2 * padding_) {
      shape_error(kind(), x.shape, k.shape, "kernel larger than padded input");
    }
    ho_ = (l_.h + 2 * padding_ - kh_) / stride_ + 1;
    wo_ = (l_.w + 2 * padding_ - kw_) / stride_ + 1;
    if (has_bias_ && in[2]->size() != o_) shape_error(kind(), k.shape, in[2]->shape, "bias");
    out = Tensor(image_shape(l_, o_, ho_, wo_), 0.0);
    const std::size_t ckk = l_.c * kh_ * kw_, hw = ho_ * wo_;
    cols_.assign(ckk * hw, 0.0);
    for (std::size_t n = 0; n < l_.n; ++n) {
      kernels::im2col(x.data.data() + n * l_.c * l_.h * l_.w, l_.c, l_.h, l_.w, kh_, kw_, stride_, padding_, ho_,
                      wo_, cols_.data());
      double* dst = out.data.data() + n * o_ * hw;
      kernels::gemm_nn(k.data.data(), cols_.data(), dst, o_, ckk, hw);
      if (has_bias_) {
        for (std::size_t c = 0; c < o_; ++c) {
          for (std::size_t i = 0; i < hw; ++i) dst[c * hw + i] += in[2]->data[c];
        }
      }
    }
  }

  void backward(Inputs in, const Tensor&, const Tensor& g, GradInputs gin) override {
    const Tensor& x = *in[0];
    const Tensor& k = *in[1];
    const std::size_t ckk = l_.c * kh_ * kw_, hw = ho_ * wo_;
    std::vector<double> dcols(ckk * hw);
    for (std::size_t n = 0; n < l_.n; ++n) {
      const double* gn = g.data.data() + n * o_ * hw;
      if (gin[1]) {
        kernels::im2col(x.data.data() + n * l_.c * l_.h * l_.w, l_.c, l_.h, l_.w, kh_, kw_, stride_, padding_, ho_,
                        wo_, cols_.data());
        kernels::gemm_nt(gn, cols_.data(), gin[1]->data.data(), o_, hw, ckk);
      }
      if (gin[0]) {
        std::fill(dcols.begin(), dcols.end(), 0.0);
        kernels::gemm_tn(k.data.data(), gn, dcols.data(), ckk, o_, hw);
        kernels::col2im(dcols.data(), l_.c, l_.h, l_.w, kh_, kw_, stride_, padding_, ho_, wo_,
                        gin[0]->data.data() + n * l_.c * l_.h * l_.w);
      }
      if (has_bias_ && gin[2]) {
        for (std::size_t c = 0; c < o_; ++c) {
          double s = 0.0;
          for (std::size_t i = 0; i < hw; ++i) s += gn[c * hw + i];
          gin[2]->data[c] += s;
        }
      }
    }
  }

 private:
  std::size_t stride_, padding_;
  bool has_bias_;
  Image4 l_{};
  std::size_t o_ = 0, kh_ = 0, kw_ = 0, ho_ = 0, wo_ = 0;
  std::vector<double> cols_;
};

class ConvTranspose2dOp final : public Op {
 public:
  ConvTranspose2dOp(std::size_t stride, std::size_t padding, std::size_t output_padding, bool has_bias)
      : stride_(stride), padding_(padding), output_padding_(output_padding), has_bias_(has_bias) {}
  OpKind kind() const override { return OpKind::conv_transpose2d; }

  void forward(Inputs in, Tensor& out) override {
    const Tensor& x = *in[0];
    const Tensor& k = *in[1];
    l_ = image_layout(x.shape, "conv_transpose2d");
    if (k.rank() != 4 || k.shape[0] != l_.c) shape_error(kind(), x.shape, k.shape, "kernel channels");
    if (stride_ == 0 || output_padding_ >= stride_) {
      throw ShapeError("conv_transpose2d: need stride > 0 and output_padding < stride");
    }
    o_ = k.shape[1];
    kh_ = k.shape[2];
    kw_ = k.shape[3];
    const long hh = static_cast<long>((l_.h - 1) * stride_ + kh_ + output_padding_) - 2 * static_cast<long>(padding_);
    const long ww = static_cast<long>((l_.w - 1) * stride_ + kw_ + output_padding_) - 2 * static_cast<long>(padding_);
    if (hh < 1 || ww < 1) shape_error(kind(), x.shape, k.shape, "non-positive output extent");
    ho_ = static_cast<std::size_t>(hh);
    wo_ = static_cast<std::size_t>(ww);
    if (has_bias_ && in[2]->size() != o_) shape_error(kind(), k.shape, in[2]->shape, "bias");
    out = Tensor(image_shape(l_, o_, ho_, wo_), 0.0);
    const std::size_t okk = o_ * kh_ * kw_, hw = l_.h * l_.w, ohw = ho_ * wo_;
    std::vector<double> cols(okk * hw);
    for (std::size_t n = 0; n < l_.n; ++n) {
      std::fill(cols.begin(), cols.end(), 0.0);
      kernels::gemm_tn(k.data.data(), x.data.data() + n * l_.c * hw, cols.data(), okk, l_.c, hw);
      double* dst = out.data.data() + n * o_ * ohw;
      kernels::col2im(cols.data(), o_, ho_, wo_, kh_, kw_, stride_, padding_, l_.h, l_.w, dst);
      if (has_bias_) {
        for (std::size_t c = 0; c < o_; ++c) {
          for (std::size_t i = 0; i < ohw; ++i) dst[c * ohw + i] += in[2]->data[c];
        }
      }
    }
  }

  void backward(Inputs in, const Tensor&, const Tensor& g, GradInputs gin) override {
    const Tensor& x = *in[0];
    const Tensor& k = *in[1];
    const std::size_t okk = o_ * kh_ * kw_, hw = l_.h * l_.w, ohw = ho_ * wo_;
    std::vector<double> dcols(okk * hw);
    for (std::size_t n = 0; n < l_.n; ++n) {
      const double* gn = g.data.data() + n * o_ * ohw;
      kernels::im2col(gn, o_, ho_, wo_, kh_, kw_, stride_, padding_, l_.h, l_.w, dcols.data());
      if (gin[0]) kernels::gemm_nn(k.data.data(), dcols.data(), gin[0]->data.data() + n * l_.c * hw, l_.c, okk, hw);
      if (gin[1]) kernels::gemm_nt(x.data.data() + n * l_.c * hw, dcols.data(), gin[1]->data.data(), l_.c, hw, okk);
      if (has_bias_ && gin[2]) {
        for (std::size_t c = 0; c < o_; ++c) {
          double s = 0.0;
          for (std::size_t i = 0; i < ohw; ++i) s += gn[c * ohw + i];
          gin[2]->data[c] += s;
        }
      }
    }
  }

 private:
  std::size_t stride_, padding_, output_padding_;
  bool has_bias_;
  Image4 l_{};
  std::size_t o_ = 0, kh_ = 0, kw_ = 0, ho_ = 0, wo_ = 0;
};

class MaxPoolOp final : public Op {
 public:
  MaxPoolOp(std::size_t window, std::size_t stride, std::size_t padding)
      : window_(window), stride_(stride), padding_(padding) {}
  OpKind kind() const override { return OpKind::maxpool2d; }

  void forward(Inputs in, Tensor& out) override {
    const Tensor& x = *in[0];
    const auto l = image_layout(x.shape, "maxpool2d");
    if (window_ == 0 || stride_ == 0 || 2 * padding_ > window_) {
      throw ShapeError("maxpool2d: need window, stride > 0 and padding <= window / 2");
    }
    if (window_ > l.h + 2 * padding_ || window_ > l.w + 2 * padding_) {
      throw ShapeError("maxpool2d: window larger than input " + to_string(x.shape));
    }
    const std::size_t ho = (l.h + 2 * padding_ - window_) / stride_ + 1;
    const std::size_t wo = (l.w + 2 * padding_ - window_) / stride_ + 1;
    out = Tensor(image_shape(l, l.c, ho, wo));
    argmax_.assign(out.size(), 0);
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < l.n * l.c; ++plane) {
      const double* src = x.data.data() + plane * l.h * l.w;
      for (std::size_t oh = 0; oh < ho; ++oh) {
        for (std::size_t ow = 0; ow < wo; ++ow, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t arg = 0;
          bool found = false;
          for (std::size_t i = 0; i < window_; ++i) {
            const long r = static_cast<long>(oh * stride_ + i) - static_cast<long>(padding_);
            if (r < 0 || r >= static_cast<long>(l.h)) continue;
            for (std::size_t j = 0; j < window_; ++j) {
              const long c = static_cast<long>(ow * stride_ + j) - static_cast<long>(padding_);
              if (c < 0 || c >= static_cast<long>(l.w)) continue;
              const std::size_t at = static_cast<std::size_t>(r) * l.w + static_cast<std::size_t>(c);
              if (!found || src[at] > best) {
                best = src[at];
                arg = at;
                found = true;
              }
            }
          }
          out.data[o] = best;
          argmax_[o] = plane * l.h * l.w + arg;
        }
      }
    }
  }

  void backward(Inputs, const Tensor&, const Tensor& g, GradInputs gin) override {
    if (!gin[0]) return;
    for (std::size_t o = 0; o < g.size(); ++o) gin[0]->data[argmax_[o]] += g.data[o];
  }

 private:
  std::size_t window_, stride_, padding_;
  std::vector<std::size_t> argmax_;
};

}  // namespace

Var matmul(Var a, Var b, bool transpose_a, bool transpose_b) {
  return emit(std::make_unique<MatmulOp>(transpose_a, transpose_b), {a, b});
}

Var add(Var a, Var b) { return emit(std::make_unique<BinaryOp>(Binary::add), {a, b}); }
Var sub(Var a, Var b) { return emit(std::make_unique<BinaryOp>(Binary::sub), {a, b}); }
Var mul(Var a, Var b) { return emit(std::make_unique<BinaryOp>(Binary::mul), {a, b}); }

Var scale(Var x, double factor) { return emit(std::make_unique<ScaleOp>(factor, false), {x}); }
Var grad_scale(Var x, double factor) { return emit(std::make_unique<ScaleOp>(factor, true), {x}); }
Var square(Var x) { return emit(std::make_unique<UnaryOp>(Unary::square), {x}); }
Var sum(Var x) { return emit(std::make_unique<ReduceOp>(false), {x}); }
Var mean(Var x) { return emit(std::make_unique<ReduceOp>(true), {x}); }

Var relu(Var x) { return emit(std::make_unique<UnaryOp>(Unary::relu), {x}); }
Var tanh(Var x) { return emit(std::make_unique<UnaryOp>(Unary::tanh), {x}); }
Var gelu(Var x) { return emit(std::make_unique<UnaryOp>(Unary::gelu), {x}); }
Var softmax(Var x) { return emit(std::make_unique<SoftmaxOp>(false), {x}); }
Var log_softmax(Var x) { return emit(std::make_unique<SoftmaxOp>(true), {x}); }

Var layer_norm(Var x, Var gain, Var bias, double epsilon) {
  if (!(epsilon > 0.0)) throw Error("layer_norm: epsilon must be positive");
  return emit(std::make_unique<LayerNormOp>(epsilon), {x, gain, bias});
}

Var batch_norm(Var x, Var gain, Var bias, BatchNormStats& running, bool training, double momentum, double epsilon) {
  const auto l = channel_layout(x.shape());
  if (running.running_mean.size() != l.c) {
    running.running_mean = Tensor(Shape{l.c}, 0.0);
    running.running_var = Tensor(Shape{l.c}, 1.0);
  }
  Var y = emit(std::make_unique<BatchNormOp>(training, epsilon, running.running_mean, running.running_var),
               {x, gain, bias});
  if (training) {
    const Tensor& xv = x.value();
    const double m = static_cast<double>(l.n * l.spatial);
    for (std::size_t c = 0; c < l.c; ++c) {
      double mu = 0.0;
      for (std::size_t n = 0; n < l.n; ++n) {
        for (std::size_t s = 0; s < l.spatial; ++s) mu += xv.data[(n * l.c + c) * l.spatial + s];
      }
      mu /= m;
      double ss = 0.0;
      for (std::size_t n = 0; n < l.n; ++n) {
        for (std::size_t s = 0; s < l.spatial; ++s) {
          const double d = xv.data[(n * l.c + c) * l.spatial + s] - mu;
          ss += d * d;
        }
      }
      const double unbiased = ss / (m - 1.0);
      running.running_mean.data[c] = (1.0 - momentum) * running.running_mean.data[c] + momentum * mu;
      running.running_var.data[c] = (1.0 - momentum) * running.running_var.data[c] + momentum * unbiased;
    }
  }
  return y;
}

Var dropout(Var x, double p, bool training, Rng& rng, bool channelwise) {
  if (p < 0.0 || p >= 1.0) throw Error("dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  const Shape& s = x.shape();
  std::size_t period = 1;
  if (channelwise) {
    if (s.size() != 4) throw ShapeError("dropout2d: expected [N, C, H, W], got " + to_string(s));
    period = s[2] * s[3];
  }
  return emit(std::make_unique<MaskOp>(OpKind::dropout, keep_mask(numel(s) / period, p, rng), period), {x});
}

Var drop_path(Var x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw Error("drop_path: p must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("drop_path: scalar input");
  const std::size_t period = numel(s) / s[0];
  return emit(std::make_unique<MaskOp>(OpKind::drop_path, keep_mask(s[0], p, rng), period), {x});
}

Var reshape(Var x, Shape shape) { return emit(std::make_unique<ReshapeOp>(std::move(shape)), {x}); }
Var permute(Var x, std::vector<std::size_t> axes) { return emit(std::make_unique<PermuteOp>(std::move(axes)), {x}); }
Var mean_over_axis(Var x, std::size_t axis) { return emit(std::make_unique<MeanAxisOp>(axis), {x}); }

Var concat(const std::vector<Var>& xs, std::size_t axis) {
  if (xs.empty()) throw Error("concat: no inputs");
  return emit(std::make_unique<ConcatOp>(axis), xs);
}

Var gather_tokens(Var x, std::vector<std::vector<std::size_t>> indices) {
  return emit(std::make_unique<GatherTokensOp>(std::move(indices)), {x});
}

Var scatter_tokens(Var visible, Var fill, std::vector<std::vector<std::size_t>> indices, std::size_t num_tokens) {
  return emit(std::make_unique<ScatterTokensOp>(std::move(indices), num_tokens), {visible, fill});
}

Var pick(Var x, std::vector<std::size_t> indices) { return emit(std::make_unique<PickOp>(std::move(indices)), {x}); }

Var conv2d(Var x, Var kernel, std::optional<Var> bias, std::size_t stride, std::size_t padding) {
  if (bias) return emit(std::make_unique<Conv2dOp>(stride, padding, true), {x, kernel, *bias});
  return emit(std::make_unique<Conv2dOp>(stride, padding, false), {x, kernel});
}

Var conv_transpose2d(Var x, Var kernel, std::optional<Var> bias, std::size_t stride, std::size_t padding,
                     std::size_t output_padding) {
  if (bias) {
    return emit(std::make_unique<ConvTranspose2dOp>(stride, padding, output_padding, true), {x, kernel, *bias});
  }
  return emit(std::make_unique<ConvTranspose2dOp>(stride, padding, output_padding, false), {x, kernel});
}

Var maxpool2d(Var x, std::size_t window, std::size_t stride, std::size_t padding) {
  return emit(std::make_unique<MaxPoolOp>(window, stride, padding), {x});
}

}  // namespace cre::ops
