#include <cmath>
#include <limits>
#include <set>

#include "cre/grad_check.hpp"
#include "cre/kernels.hpp"
#include "cre/ops.hpp"
#include "doctest.h"
#include "support/op_cases.hpp"

using namespace cre;

namespace {

Tensor naive_conv(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = (H + 2 * pad - kh) / stride + 1, ow = (W + 2 * pad - kw) / stride + 1;
  Tensor out({O, oh, ow});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b) {
              const long r = static_cast<long>(i * stride + a) - static_cast<long>(pad);
              const long s = static_cast<long>(j * stride + b) - static_cast<long>(pad);
              if (r < 0 || s < 0 || r >= static_cast<long>(H) || s >= static_cast<long>(W)) continue;
              acc += x[(c * H + r) * W + s] * k[((o * C + c) * kh + a) * kw + b];
            }
        out[(o * oh + i) * ow + j] = acc;
      }
  return out;
}

// tanh whose adjoint is twice the true derivative.
class BrokenTanh final : public Op {
 public:
  OpKind kind() const override { return OpKind::tanh; }
  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    out = Tensor(in[0]->shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh((*in[0])[i]);
  }
  void backward(std::span<const Tensor* const>, const Tensor& out, const Tensor& go,
                std::span<Tensor* const> gi) override {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < out.size(); ++i) (*gi[0])[i] += 2.0 * go[i] * (1.0 - out[i] * out[i]);
  }
};

}  // namespace

TEST_CASE("forward examples") {
  Graph g;
  auto r = ops::relu(g.leaf(Tensor({3}, {-1, 0, 2})));
  CHECK(r.value().data == std::vector<double>{0, 0, 2});

  Rng rng(3);
  Tensor a = Tensor::uniform({3, 3}, rng, -1, 1);
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto m = ops::matmul(g.leaf(eye), g.leaf(a));
  CHECK(m.value().data == a.data);

  auto s = ops::softmax(g.leaf(Tensor({4}, 0.0)));
  for (double v : s.value().data) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("forward errors") {
  Graph g;
  auto a = g.leaf(Tensor({2, 3}));
  auto b = g.leaf(Tensor({4, 2}));
  try {
    ops::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::add(a, b), ShapeError);
  CHECK_THROWS_AS(g.leaf(Tensor({1}, {std::numeric_limits<double>::quiet_NaN()})), NonFiniteError);

  // Non-finite values bound before a replay are rejected too.
  Graph h;
  auto x = h.leaf(Tensor({2}, {1, 2}), true);
  auto y = ops::sum(ops::square(x));
  h.leaf_value(x)[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(h.forward(y), NonFiniteError);
}

TEST_CASE("backward examples") {
  Graph g;
  auto x = g.leaf(Tensor({1}, {3.0}), true);
  auto w = g.leaf(Tensor({2}, {1.0, 2.0}), true);
  auto loss = ops::mean(ops::square(x));
  auto grads = g.backward(loss);
  CHECK(grads[x][0] == doctest::Approx(6.0));
  CHECK(grads[w].shape == Shape{2});
  CHECK(grads[w].data == std::vector<double>{0.0, 0.0});
}

TEST_CASE("backward errors") {
  Graph g;
  auto x = g.leaf(Tensor({2}, {1, 2}), true);
  auto y = ops::square(x);
  CHECK_THROWS_AS(g.backward(y), Error);
  auto loss = ops::sum(y);
  g.backward(loss);
  try {
    g.backward(loss);
    FAIL("expected second backward to throw");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("consumed") != std::string::npos);
  }
}

TEST_CASE("two-layer MLP gradients match central differences") {
  Rng rng(11);
  Graph g;
  auto x = g.leaf(Tensor::uniform({4, 5}, rng, -1, 1), false);
  auto w1 = g.leaf(Tensor::uniform({5, 7}, rng, -1, 1), true);
  auto b1 = g.leaf(Tensor::uniform({7}, rng, -1, 1), true);
  auto w2 = g.leaf(Tensor::uniform({7, 3}, rng, -1, 1), true);
  auto b2 = g.leaf(Tensor::uniform({3}, rng, -1, 1), true);
  auto h = ops::tanh(ops::add(ops::matmul(x, w1), b1));
  auto out = ops::add(ops::matmul(h, w2), b2);
  auto loss = ops::mean(ops::square(out));
  std::vector<Var> leaves{w1, b1, w2, b2};
  auto report = grad_check(g, loss, leaves);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("conv2d") {
  Rng rng(5);
  SUBCASE("identity kernel") {
    Graph g;
    Tensor x = Tensor::uniform({1, 4, 4}, rng, -1, 1);
    auto y = ops::conv2d(g.leaf(x), g.leaf(Tensor({1, 1, 1, 1}, 1.0)), std::nullopt, 1, 0);
    CHECK(y.value().data == x.data);
  }
  SUBCASE("zero input") {
    Graph g;
    auto y = ops::conv2d(g.leaf(Tensor({2, 5, 5})), g.leaf(Tensor::uniform({3, 2, 3, 3}, rng, -1, 1)),
                         std::nullopt, 1, 1);
    for (double v : y.value().data) CHECK(v == 0.0);
  }
  SUBCASE("naive oracle") {
    for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {1, 1}, {2, 1}, {2, 0}}) {
      Graph g;
      Tensor x = Tensor::uniform({1, 5, 5}, rng, -1, 1);
      Tensor k = Tensor::uniform({2, 1, 3, 3}, rng, -1, 1);
      auto y = ops::conv2d(g.leaf(x), g.leaf(k), std::nullopt, stride, pad);
      Tensor want = naive_conv(x, k, stride, pad);
      REQUIRE(y.shape() == want.shape);
      for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(y.value()[i] - want[i]) < 1e-12);
    }
  }
  SUBCASE("kernel larger than padded input") {
    Graph g;
    CHECK_THROWS_AS(ops::conv2d(g.leaf(Tensor({1, 2, 2})), g.leaf(Tensor({1, 1, 5, 5})), std::nullopt, 1, 1),
                    ShapeError);
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  // <conv(x), y> == <x, convT(y)> for matching stride and padding.
  Rng rng(9);
  Graph g;
  Tensor x = Tensor::uniform({1, 2, 6, 6}, rng, -1, 1);
  Tensor k = Tensor::uniform({3, 2, 3, 3}, rng, -1, 1);
  auto cx = ops::conv2d(g.leaf(x), g.leaf(k), std::nullopt, 2, 1);
  Tensor y = Tensor::uniform(cx.shape(), rng, -1, 1);
  auto ty = ops::conv_transpose2d(g.leaf(y), g.leaf(k), std::nullopt, 2, 1, 1);
  REQUIRE(ty.shape() == x.shape);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += cx.value()[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty.value()[i];
  CHECK(std::abs(lhs - rhs) < 1e-12);
}

TEST_CASE("maxpool2d") {
  SUBCASE("2x2 example") {
    Graph g;
    auto y = ops::maxpool2d(g.leaf(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})), 2, 2);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.value()[0] == 4.0);
  }
  SUBCASE("ties route to the first element") {
    Graph g;
    auto x = g.leaf(Tensor({1, 1, 4, 4}, 0.5), true);
    auto y = ops::maxpool2d(x, 2, 2);
    for (double v : y.value().data) CHECK(v == 0.5);
    auto grads = g.backward(ops::sum(y));
    const std::set<std::size_t> firsts{0, 2, 8, 10};
    for (std::size_t i = 0; i < 16; ++i) CHECK(grads[x][i] == (firsts.count(i) ? 1.0 : 0.0));
  }
  SUBCASE("brute force oracle") {
    Rng rng(4);
    Graph g;
    Tensor x = Tensor::uniform({1, 1, 8, 8}, rng, -1, 1);
    auto y = ops::maxpool2d(g.leaf(x), 2, 2);
    REQUIRE(y.shape() == Shape{1, 1, 4, 4});
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) m = std::max(m, x[(2 * i + a) * 8 + 2 * j + b]);
        CHECK(y.value()[i * 4 + j] == m);
      }
  }
  SUBCASE("padding ignores the border") {
    Graph g;
    auto y = ops::maxpool2d(g.leaf(Tensor({1, 1, 2, 2}, {-1, -2, -3, -4})), 2, 2, 1);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.value().data == std::vector<double>{-1, -2, -3, -4});
  }
}

TEST_CASE("layer_norm") {
  Graph g;
  auto one = g.leaf(Tensor({3}, 1.0));
  auto zero = g.leaf(Tensor({3}, 0.0));
  auto flat = ops::layer_norm(g.leaf(Tensor({3}, 1.0)), one, zero);
  for (double v : flat.value().data) CHECK(v == 0.0);

  auto one2 = g.leaf(Tensor({2}, 1.0));
  auto zero2 = g.leaf(Tensor({2}, 0.0));
  auto sym = ops::layer_norm(g.leaf(Tensor({2}, {-1.0, 1.0})), one2, zero2, 1e-5);
  const double delta = 1.0 - sym.value()[1];
  CHECK(sym.value()[0] == doctest::Approx(-sym.value()[1]).epsilon(1e-15));
  CHECK(delta >= 0.0);
  CHECK(delta <= 1e-5);

  // Statistics by recomputation: mean 0 and variance var/(var+eps), which is 1 up to eps.
  Rng rng(21);
  const std::size_t D = 17;
  Tensor x = Tensor::uniform({4, D}, rng, -3, 3);
  auto oneD = g.leaf(Tensor({D}, 1.0));
  auto zeroD = g.leaf(Tensor({D}, 0.0));
  auto y = ops::layer_norm(g.leaf(x), oneD, zeroD, 1e-5);
  for (std::size_t r = 0; r < 4; ++r) {
    double mx = 0, vx = 0, my = 0, vy = 0;
    for (std::size_t j = 0; j < D; ++j) mx += x[r * D + j] / D;
    for (std::size_t j = 0; j < D; ++j) vx += (x[r * D + j] - mx) * (x[r * D + j] - mx) / D;
    for (std::size_t j = 0; j < D; ++j) my += y.value()[r * D + j] / D;
    for (std::size_t j = 0; j < D; ++j) vy += (y.value()[r * D + j] - my) * (y.value()[r * D + j] - my) / D;
    CHECK(std::abs(my) < 1e-10);
    CHECK(std::abs(vy - vx / (vx + 1e-5)) < 1e-10);
    CHECK(std::abs(vy - 1.0) < 1e-4);
  }
}

TEST_CASE("batch_norm running statistics") {
  Graph g;
  ops::BatchNormStats stats;
  auto gain = g.leaf(Tensor({1}, 1.0));
  auto bias = g.leaf(Tensor({1}, 0.0));
  ops::batch_norm(g.leaf(Tensor({4, 1}, {1, 2, 3, 4})), gain, bias, stats, true);
  CHECK(stats.running_mean[0] == doctest::Approx(0.1 * 2.5));
  // unbiased variance 5/3
  CHECK(stats.running_var[0] == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));
  auto e = ops::batch_norm(g.leaf(Tensor({1, 1}, {0.25})), gain, bias, stats, false);
  CHECK(e.value()[0] == doctest::Approx(0.0));
}

TEST_CASE("dropout") {
  Rng rng(1);
  Graph g;
  auto x = g.leaf(Tensor({1000}, 1.0));
  auto eval = ops::dropout(x, 0.3, false, rng);
  CHECK(eval.value().data == x.value().data);
  auto train = ops::dropout(x, 0.3, true, rng);
  std::size_t kept = 0;
  for (double v : train.value().data) {
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.7) < 1e-15));
    kept += v != 0.0;
  }
  CHECK(kept > 600);
  CHECK(kept < 800);
}

TEST_CASE("grad_check") {
  Rng rng(2);
  SUBCASE("linear layer passes") {
    Graph g;
    auto x = g.leaf(Tensor::uniform({3, 4}, rng, -1, 1), true);
    auto w = g.leaf(Tensor::uniform({4, 2}, rng, -1, 1), true);
    auto b = g.leaf(Tensor::uniform({2}, rng, -1, 1), true);
    auto c = g.leaf(Tensor::uniform({3, 2}, rng, -1, 1));
    auto loss = ops::sum(ops::mul(ops::add(ops::matmul(x, w), b), c));
    std::vector<Var> leaves{x, w, b};
    auto report = grad_check(g, loss, leaves, {1e-4, 1e-4});
    CHECK(report.passed);
    CHECK(report.leaves.size() == 3);
  }
  SUBCASE("tanh chain passes") {
    Graph g;
    auto x = g.leaf(Tensor::uniform({6}, rng, -1, 1), true);
    auto loss = ops::sum(ops::tanh(ops::tanh(ops::tanh(x))));
    std::vector<Var> leaves{x};
    CHECK(grad_check(g, loss, leaves).passed);
  }
  SUBCASE("corrupted adjoint fails") {
    Graph g;
    auto x = g.leaf(Tensor::uniform({6}, rng, -1, 1), true);
    std::vector<Var> in{x};
    auto y = g.record(std::make_unique<BrokenTanh>(), in);
    auto loss = ops::sum(y);
    std::vector<Var> leaves{x};
    auto report = grad_check(g, loss, leaves);
    CHECK_FALSE(report.passed);
    CHECK(report.max_rel_error > 0.4);
  }
  SUBCASE("values restored") {
    Graph g;
    Tensor v = Tensor::uniform({5}, rng, -1, 1);
    auto x = g.leaf(v, true);
    auto loss = ops::sum(ops::square(x));
    std::vector<Var> leaves{x};
    grad_check(g, loss, leaves);
    CHECK(g.value(x).data == v.data);
  }
}

TEST_CASE("every op kind passes the finite-difference check") {
  std::set<OpKind> covered;
  for (const auto& oc : testing::op_cases()) {
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
      auto report = testing::run_op_case(oc, mix_seed(trial, 77));
      INFO(oc.name << " trial " << trial << " max rel error " << report.max_rel_error);
      CHECK(report.passed);
    }
    covered.insert(oc.kind);
  }
  for (OpKind k : {OpKind::matmul, OpKind::add, OpKind::scale, OpKind::conv2d, OpKind::conv_transpose2d,
                   OpKind::maxpool2d, OpKind::relu, OpKind::tanh, OpKind::gelu, OpKind::softmax,
                   OpKind::log_softmax, OpKind::layer_norm, OpKind::batch_norm, OpKind::dropout,
                   OpKind::drop_path, OpKind::reshape, OpKind::mean_over_axis, OpKind::concat,
                   OpKind::gather_tokens, OpKind::scatter_tokens}) {
    INFO(op_name(k));
    CHECK(covered.count(k) == 1);
  }
}

TEST_CASE("grad_scale scales only the adjoint") {
  Graph g;
  auto x = g.leaf(Tensor({2}, {1.0, -2.0}), true);
  auto y = ops::grad_scale(x, 0.25);
  CHECK(y.value().data == x.value().data);
  auto grads = g.backward(ops::sum(y));
  CHECK(grads[x].data == std::vector<double>{0.25, 0.25});
}

TEST_CASE("forward is deterministic under replay and reseeding") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Graph g;
    Tensor xv = Tensor::uniform({4, 6}, rng, -1, 1);
    auto x = g.leaf(xv, true);
    auto h = ops::dropout(ops::gelu(x), 0.4, true, rng);
    auto out = ops::sum(ops::drop_path(h, 0.5, true, rng));
    Tensor first = out.value();
    Tensor replay = g.forward(out);
    CHECK(first.data == replay.data);
    return first.item();
  };
  CHECK(run(42) == run(42));
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(8);
  auto build = [&](Graph& g, const Tensor& xv, const Tensor& wv, Var& x, Var& w) {
    x = g.leaf(xv, true);
    w = g.leaf(wv, true);
    auto h = ops::tanh(ops::matmul(x, w));
    return std::pair{ops::mean(ops::square(h)), ops::sum(ops::gelu(h))};
  };
  Tensor xv = Tensor::uniform({3, 4}, rng, -1, 1), wv = Tensor::uniform({4, 5}, rng, -1, 1);
  Var x, w;
  Graph g1, g2, g3;
  auto [a1, b1] = build(g1, xv, wv, x, w);
  auto ga = g1.backward(a1);
  Tensor ax = ga[x], aw = ga[w];
  auto [a2, b2] = build(g2, xv, wv, x, w);
  auto gb = g2.backward(b2);
  Tensor bx = gb[x], bw = gb[w];
  auto [a3, b3] = build(g3, xv, wv, x, w);
  auto gs = g3.backward(ops::add(a3, b3));
  for (std::size_t i = 0; i < ax.size(); ++i) CHECK(std::abs(gs[x][i] - (ax[i] + bx[i])) < 1e-12);
  for (std::size_t i = 0; i < aw.size(); ++i) CHECK(std::abs(gs[w][i] - (aw[i] + bw[i])) < 1e-12);
}

TEST_CASE("reshape adjoint reproduces the upstream gradient") {
  Rng rng(6);
  Graph g;
  auto x = g.leaf(Tensor::uniform({2, 3, 4}, rng, -1, 1), true);
  auto y = ops::reshape(x, Shape{4, 6});
  Tensor upstream = Tensor::uniform({4, 6}, rng, -1, 1);
  auto grads = g.backward(ops::sum(ops::mul(y, g.leaf(upstream))));
  Graph h;
  auto back = ops::reshape(h.leaf(grads[x]), Shape{4, 6});
  CHECK(back.value().data == upstream.data);
  CHECK(back.shape() == upstream.shape);
}

TEST_CASE("gemm kernels") {
  Rng rng(12);
  Tensor a = Tensor::uniform({3, 4}, rng, -1, 1), b = Tensor::uniform({4, 5}, rng, -1, 1);
  std::vector<double> c(15, 0.0);
  kernels::gemm_nn(a.data.data(), b.data.data(), c.data(), 3, 4, 5);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 5 + j];
      CHECK(std::abs(c[i * 5 + j] - s) < 1e-14);
    }
}
