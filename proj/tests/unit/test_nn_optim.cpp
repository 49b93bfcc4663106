#include <algorithm>
#include <cmath>
#include <numeric>

#include "cre/adam.hpp"
#include "cre/grad_check.hpp"
#include "cre/losses.hpp"
#include "cre/nn.hpp"
#include "doctest.h"

using namespace cre;
using namespace cre::nn;

namespace {

double direct_ce(const Tensor& logits, const std::vector<std::size_t>& labels) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(logits[b * K + k]);
    total += -std::log(std::exp(logits[b * K + labels[b]]) / z);
  }
  return total / static_cast<double>(B);
}

std::vector<std::size_t> random_labels(std::size_t n, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, 9);
  std::vector<std::size_t> out(n);
  for (auto& l : out) l = d(rng);
  return out;
}

}  // namespace

TEST_CASE("mse_loss") {
  Rng rng(1);
  Graph g;
  Tensor p = Tensor::uniform({3, 4}, rng, -1, 1);
  CHECK(mse_loss(g.leaf(p), g.leaf(p)).value().item() == 0.0);
  CHECK(mse_loss(g.leaf(Tensor({1}, {0.0})), g.leaf(Tensor({1}, {2.0}))).value().item() == 4.0);
  Tensor t = Tensor::uniform({3, 4}, rng, -1, 1);
  double want = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) want += (p[i] - t[i]) * (p[i] - t[i]);
  want /= static_cast<double>(p.size());
  CHECK(std::abs(mse_loss(g.leaf(p), g.leaf(t)).value().item() - want) < 1e-15);
  CHECK_THROWS_AS(mse_loss(g.leaf(p), g.leaf(Tensor({4, 3}))), ShapeError);
}

TEST_CASE("masked_mse_loss") {
  Rng rng(2);
  Graph g;
  Tensor p = Tensor::uniform({2, 1, 4, 4}, rng, -1, 1), t = Tensor::uniform({2, 1, 4, 4}, rng, -1, 1);
  SUBCASE("full mask equals mse") {
    double full = mse_loss(g.leaf(p), g.leaf(t)).value().item();
    double masked = masked_mse_loss(g.leaf(p), g.leaf(t), Tensor(p.shape, 1.0)).value().item();
    CHECK(std::abs(full - masked) < 1e-15);
  }
  SUBCASE("locality") {
    Tensor mask(p.shape, 0.0);
    Tensor q = t;
    for (std::size_t i = 0; i < mask.size(); i += 3) {
      mask[i] = 1.0;
      q[i] = p[i];
    }
    CHECK(masked_mse_loss(g.leaf(p), g.leaf(q), mask).value().item() == 0.0);
  }
  SUBCASE("half mask oracle") {
    Tensor mask(p.shape, 0.0);
    double sum = 0.0, count = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if ((i / 8) % 2 == 0) {
        mask[i] = 1.0;
        sum += (p[i] - t[i]) * (p[i] - t[i]);
        count += 1.0;
      }
    }
    CHECK(std::abs(masked_mse_loss(g.leaf(p), g.leaf(t), mask).value().item() - sum / count) < 1e-15);
  }
  SUBCASE("empty mask") { CHECK_THROWS_AS(masked_mse_loss(g.leaf(p), g.leaf(t), Tensor(p.shape, 0.0)), Error); }
}

TEST_CASE("cross_entropy_loss") {
  Rng rng(3);
  Graph g;
  CHECK(cross_entropy_loss(g.leaf(Tensor({2, 10}, 0.0)), {3, 7}).value().item() ==
        doctest::Approx(std::log(10.0)).epsilon(1e-14));
  Tensor sat({1, 10}, 0.0);
  sat[4] = 1000.0;
  const double s = cross_entropy_loss(g.leaf(sat), {4}).value().item();
  CHECK(std::isfinite(s));
  CHECK(s < 1e-12);
  Tensor logits = Tensor::uniform({6, 10}, rng, -3, 3);
  auto labels = random_labels(6, rng);
  CHECK(std::abs(cross_entropy_loss(g.leaf(logits), labels).value().item() - direct_ce(logits, labels)) < 1e-10);
  CHECK_THROWS_AS(cross_entropy_loss(g.leaf(logits), {0, 1, 2, 3, 4, 10}), Error);
}

TEST_CASE("losses are invariant to batch permutation") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t B = 7;
    Tensor logits = Tensor::uniform({B, 10}, rng, -2, 2);
    Tensor target = Tensor::uniform({B, 10}, rng, -1, 1);
    auto labels = random_labels(B, rng);
    std::vector<std::size_t> perm(B);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor pl({B, 10}), pt({B, 10});
    std::vector<std::size_t> plab(B);
    for (std::size_t i = 0; i < B; ++i) {
      std::copy_n(logits.data.begin() + perm[i] * 10, 10, pl.data.begin() + i * 10);
      std::copy_n(target.data.begin() + perm[i] * 10, 10, pt.data.begin() + i * 10);
      plab[i] = labels[perm[i]];
    }
    Graph g;
    CHECK(std::abs(cross_entropy_loss(g.leaf(logits), labels).value().item() -
                   cross_entropy_loss(g.leaf(pl), plab).value().item()) < 1e-12);
    CHECK(std::abs(mse_loss(g.leaf(logits), g.leaf(target)).value().item() -
                   mse_loss(g.leaf(pl), g.leaf(pt)).value().item()) < 1e-12);
  }
}

TEST_CASE("cross entropy is shift invariant") {
  Rng rng(5);
  for (double c : {-50.0, -1.5, 0.3, 7.0, 400.0}) {
    Tensor logits = Tensor::uniform({5, 10}, rng, -2, 2);
    auto labels = random_labels(5, rng);
    Tensor shifted = logits;
    for (auto& v : shifted.data) v += c;
    Graph g;
    CHECK(std::abs(cross_entropy_loss(g.leaf(logits), labels).value().item() -
                   cross_entropy_loss(g.leaf(shifted), labels).value().item()) < 1e-10);
  }
}

TEST_CASE("loss gradients match central differences") {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    {
      Graph g;
      auto logits = g.leaf(Tensor::uniform({4, 10}, rng, -1, 1), true);
      auto loss = cross_entropy_loss(logits, random_labels(4, rng));
      std::vector<Var> leaves{logits};
      CHECK(grad_check(g, loss, leaves).passed);
    }
    {
      Graph g;
      auto p = g.leaf(Tensor::uniform({3, 5}, rng, -1, 1), true);
      auto t = g.leaf(Tensor::uniform({3, 5}, rng, -1, 1), true);
      std::vector<Var> leaves{p, t};
      CHECK(grad_check(g, mse_loss(p, t), leaves).passed);
    }
    {
      Graph g;
      auto p = g.leaf(Tensor::uniform({3, 5}, rng, -1, 1), true);
      auto t = g.leaf(Tensor::uniform({3, 5}, rng, -1, 1), false);
      Tensor mask({3, 5}, 0.0);
      for (std::size_t i = 0; i < 15; i += 2) mask[i] = 1.0;
      std::vector<Var> leaves{p};
      CHECK(grad_check(g, masked_mse_loss(p, t, mask), leaves).passed);
    }
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Parameter w(Tensor({3}, {1.0, -2.0, 0.5}));
    Adam opt({&w});
    for (int i = 0; i < 5; ++i) opt.step();
    CHECK(w.value.data == std::vector<double>{1.0, -2.0, 0.5});
    CHECK(opt.steps() == 5);
  }
  SUBCASE("first step moves by step size times sign") {
    Parameter w(Tensor({3}, {1.0, 1.0, 1.0}));
    w.grad = Tensor({3}, {0.3, -7.0, 1e-3});
    Adam opt({&w}, {0.01});
    opt.step();
    CHECK(w.value[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(w.value[1] == doctest::Approx(1.0 + 0.01).epsilon(1e-6));
    CHECK(w.value[2] == doctest::Approx(1.0 - 0.01).epsilon(1e-4));
  }
  SUBCASE("quadratic bowl") {
    // The same recurrence run directly on a scalar.
    double m = 0, v = 0, ref = 1.0;
    for (int t = 1; t <= 100; ++t) {
      const double g = 2.0 * ref;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      ref -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    Parameter w(Tensor({1}, {1.0}));
    Adam opt({&w}, {0.1});
    for (int t = 0; t < 100; ++t) {
      w.grad = Tensor({1}, {2.0 * w.value[0]});
      opt.step();
    }
    CHECK(std::abs(w.value[0] - ref) < 1e-12);
    CHECK(std::abs(w.value[0]) < 0.05);
  }
  SUBCASE("step size zero is the identity") {
    Rng rng(7);
    Parameter w(Tensor::uniform({4, 4}, rng, -1, 1));
    const Tensor before = w.value;
    Adam opt({&w}, {0.0});
    for (int t = 0; t < 10; ++t) {
      w.grad = Tensor::uniform({4, 4}, rng, -1, 1);
      opt.step();
    }
    CHECK(w.value.data == before.data);
  }
  SUBCASE("non-finite gradient aborts without partial update") {
    Parameter a(Tensor({1}, {1.0})), b(Tensor({1}, {2.0}));
    a.grad[0] = 1.0;
    b.grad[0] = std::nan("");
    Adam opt({&a, &b});
    CHECK_THROWS_AS(opt.step(), NonFiniteError);
    CHECK(a.value[0] == 1.0);
    CHECK(opt.steps() == 0);
  }
  SUBCASE("moments track parameter shapes") {
    Parameter a(Tensor({2, 3})), b(Tensor({5}));
    Adam opt({&a, &b});
    CHECK(opt.first_moments()[0].shape == Shape{2, 3});
    CHECK(opt.second_moments()[1].shape == Shape{5});
  }
}

TEST_CASE("layer initialization") {
  Rng rng(8);
  Linear relu_layer(400, 300, Init::relu, rng), lin_layer(400, 300, Init::linear, rng);
  auto stddev = [](const Tensor& t) {
    double s = 0;
    for (double v : t.data) s += v * v;
    return std::sqrt(s / static_cast<double>(t.size()));
  };
  CHECK(stddev(relu_layer.weight().value) == doctest::Approx(std::sqrt(2.0 / 400)).epsilon(0.02));
  CHECK(stddev(lin_layer.weight().value) == doctest::Approx(std::sqrt(1.0 / 400)).epsilon(0.02));
  for (double v : relu_layer.bias().value.data) CHECK(v == 0.0);
}

TEST_CASE("parameter registry is stable") {
  auto make = [] {
    Rng rng(9);
    LayerStack s;
    s.emplace<Flatten>();
    s.emplace<Linear>(12, 5, Init::relu, rng);
    s.emplace<Activation>(Activation::Fn::relu);
    s.emplace<BatchNorm>(5);
    return s;
  };
  LayerStack a = make(), b = make();
  auto pa = a.parameters("enc."), pb = b.parameters("enc.");
  REQUIRE(pa.size() == pb.size());
  std::vector<std::string> names;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(pa[i].param->value.data == pb[i].param->value.data);
    names.push_back(pa[i].name);
  }
  CHECK(std::find(names.begin(), names.end(), "enc.1.weight") != names.end());
  // 12*5 + 5 linear, 5 + 5 batchnorm affine; running stats are buffers
  CHECK(a.parameter_count() == 75);
  CHECK(a.trainable().size() == 4);
}
