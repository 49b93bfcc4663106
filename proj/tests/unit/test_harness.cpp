#include <filesystem>
#include <limits>
#include <sstream>

#include "cre/harness.hpp"
#include "doctest.h"
#include "support/fixtures.hpp"
#include "support/synthetic.hpp"

using namespace cre;
using namespace cre::harness;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  c.seed = 3;
  return c;
}

const data::Dataset& train_set() {
  static const data::Dataset d = testing::bars(80, 1);
  return d;
}

const data::Dataset& test_set() {
  static const data::Dataset d = testing::bars(40, 2, data::Split::test);
  return d;
}

std::string csv(const std::vector<RunRecord>& records) {
  std::ostringstream o;
  write_metrics_csv(o, records);
  return o.str();
}

EpochRow row(std::size_t epoch, double accuracy, double mse) {
  EpochRow r;
  r.epoch = epoch;
  r.test.accuracy = accuracy;
  r.test.mse = mse;
  return r;
}

}  // namespace

TEST_CASE("config parsing") {
  const std::string text = R"(# every key
family = vit
size = large
n = 32
dataset = cifar10
data_root = /tmp/data
lambda = 0.95
masking_mode = v1
mask_ratio = 0.5
epochs = 7
batch_size = 128
lr_encoder = 0.002
lr_decoder = 0.003
lr_classifier = 0.004
seed = 42
limit = 1000
dropout = 0.25
droppath = 0.1   # trailing comment
workers = 3
)";
  RunConfig c = parse_config(text);
  CHECK(c.family == Family::vit);
  CHECK(c.size == ModelSize::large);
  CHECK(c.n == 32);
  CHECK(c.dataset == "cifar10");
  CHECK(c.data_root == "/tmp/data");
  CHECK(c.lambda == 0.95);
  CHECK(c.masking_mode == MaskingMode::v1);
  CHECK(c.mask_ratio == 0.5);
  CHECK(c.epochs == 7);
  CHECK(c.batch_size == 128);
  CHECK(c.lr_encoder == 0.002);
  CHECK(c.lr_decoder == 0.003);
  CHECK(c.lr_classifier == 0.004);
  CHECK(c.seed == 42);
  CHECK(c.limit == 1000);
  CHECK(c.dropout == 0.25);
  CHECK(c.droppath == 0.1);
  CHECK(c.workers == 3);
  CHECK(format_config(parse_config(format_config(c))) == format_config(c));

  CHECK_THROWS_WITH_AS(parse_config("lambda = 0.5\nalpha = 1\n"), doctest::Contains("line 2"), ParseError);
  CHECK_THROWS_WITH_AS(parse_config("n = 4\nn = 5\n"), doctest::Contains("duplicate"), ParseError);
  CHECK_THROWS_AS(parse_config("lambda = 1.5\n"), ParseError);
  CHECK_THROWS_AS(parse_config("epochs = -1\n"), ParseError);
  CHECK_THROWS_AS(parse_config("family = rnn\n"), ParseError);
  CHECK_THROWS_AS(parse_config("lambda\n"), ParseError);
  CHECK(parse_config("").lambda == RunConfig{}.lambda);
}

TEST_CASE("canonical grid and seeds") {
  const auto& g = canonical_lambdas();
  CHECK(g.size() == 12);
  CHECK(g.front() == 0.0);
  CHECK(g.back() == 1.0);
  CHECK(std::is_sorted(g.begin(), g.end()));
  CHECK(derive_seed(1, 0.5, 0) == derive_seed(1, 0.5, 0));
  CHECK(derive_seed(1, 0.5, 0) != derive_seed(1, 0.5, 1));
  CHECK(derive_seed(1, 0.5, 0) != derive_seed(1, 0.6, 0));
  CHECK(run_id(tiny_config()) == "fc-small-n16-mnist-l0.5-none-s3");
  CHECK(format_double(0.1) == "0.1");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("record_metrics") {
  RunRecord one;
  record_metrics(one, row(1, 0.4, 0.2));
  CHECK(one.best_accuracy_epoch == 1u);
  CHECK(one.best_mse_epoch == 1u);

  RunRecord r;
  const double acc[] = {0.5, 0.9, 0.7}, mse[] = {0.3, 0.1, 0.2};
  for (std::size_t e = 0; e < 3; ++e) record_metrics(r, row(e + 1, acc[e], mse[e]));
  CHECK(r.best_accuracy_epoch == 2u);
  CHECK(r.best_mse_epoch == 2u);
  CHECK(r.best().accuracy == 0.9);
  CHECK(r.best().mse == 0.1);
  CHECK_THROWS_AS(record_metrics(r, row(3, 0.1, 0.1)), Error);
  CHECK_THROWS_AS(record_metrics(r, row(5, 0.1, 0.1)), Error);

  // accuracy and MSE bests may come from different epochs
  RunRecord split;
  record_metrics(split, row(1, 0.8, 0.5));
  record_metrics(split, row(2, 0.6, 0.2));
  CHECK(split.best_accuracy_epoch == 1u);
  CHECK(split.best_mse_epoch == 2u);
}

TEST_CASE("zero epochs") {
  auto dir = testing::scratch_dir("harness_zero");
  RunConfig c = tiny_config();
  c.epochs = 0;
  RunRecord r = run_training(c, train_set(), test_set(), {dir.string(), true});
  CHECK(r.epochs.empty());
  CHECK(!r.best_accuracy_epoch);
  CHECK(r.checkpoint_accuracy.empty());
  for (auto& f : std::filesystem::recursive_directory_iterator(dir)) CHECK(f.path().extension() != ".crew");
}

TEST_CASE("training is reproducible and persists best checkpoints") {
  auto dir = testing::scratch_dir("harness_run");
  RunConfig c = tiny_config();
  RunRecord a = run_training(c, train_set(), test_set(), {dir.string(), true});
  RunRecord b = run_training(c, train_set(), test_set());
  REQUIRE(a.epochs.size() == 2);
  CHECK(!a.failed);
  CHECK(csv({a}) == csv({b}));

  c.seed = 4;
  CHECK(csv({run_training(c, train_set(), test_set())}) != csv({a}));

  const auto run_dir = dir / a.run_id;
  CHECK(std::filesystem::exists(run_dir / "metrics.csv"));
  CHECK(std::filesystem::exists(run_dir / "record.json"));
  REQUIRE(std::filesystem::exists(a.checkpoint_accuracy));
  REQUIRE(std::filesystem::exists(a.checkpoint_mse));
  auto restored = load_model(a.checkpoint_accuracy);
  CHECK(restored->spec().lambda == a.config.lambda);

  // the CSV names every column and rebuilds the same records
  std::istringstream in(csv({a}));
  std::string header;
  std::getline(in, header);
  CHECK(header == kMetricsHeader);
  std::istringstream again(csv({a}));
  auto back = read_metrics_csv(again);
  REQUIRE(back.size() == 1);
  CHECK(back[0].run_id == a.run_id);
  CHECK(back[0].best_accuracy_epoch == a.best_accuracy_epoch);
  CHECK(back[0].best_mse_epoch == a.best_mse_epoch);
  CHECK(back[0].best().accuracy == a.best().accuracy);
  CHECK(back[0].best().mse == a.best().mse);
  CHECK(csv(back) == csv({a}));
}

TEST_CASE("learning happens on the synthetic set") {
  RunConfig c = tiny_config();
  c.epochs = 8;
  c.lambda = 0.0;
  RunRecord r = run_training(c, train_set(), test_set());
  CHECK(r.best().accuracy > 0.5);
  c.lambda = 1.0;
  RunRecord rec = run_training(c, train_set(), test_set());
  CHECK(rec.epochs.back().test.mse < rec.epochs.front().test.mse);
}

TEST_CASE("non-finite loss marks the run failed") {
  data::Dataset bad = train_set();
  bad.images[0] = std::numeric_limits<double>::quiet_NaN();
  RunConfig c = tiny_config();
  RunRecord r = run_training(c, bad, test_set());
  CHECK(r.failed);
  CHECK(r.failed_epoch == 1);
  CHECK(r.epochs.empty());
  CHECK(r.error.find("non-finite") != std::string::npos);
}

TEST_CASE("sweeps") {
  RunConfig c = tiny_config();
  c.epochs = 1;
  Sweep s = lambda_sweep(c, {0.0, 1.0}, {0}, train_set(), test_set());
  CHECK(s.records.size() == 2);
  CHECK(s.table.size() == 2);

  // order of the grid does not matter
  Sweep p = lambda_sweep(c, {1.0, 0.0}, {0}, train_set(), test_set());
  REQUIRE(p.table.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(p.table[i].lambda == s.table[i].lambda);
    CHECK(p.table[i].run_id == s.table[i].run_id);
    CHECK(p.table[i].best.accuracy == s.table[i].best.accuracy);
    CHECK(p.table[i].best.mse == s.table[i].best.mse);
  }

  // adding a grid point leaves other runs unchanged; so does running concurrently
  c.workers = 2;
  Sweep wide = lambda_sweep(c, {0.0, 0.5, 1.0}, {0}, train_set(), test_set());
  CHECK(csv({wide.records[0]}) == csv({s.records[0]}));
  CHECK(csv({wide.records[2]}) == csv({s.records[1]}));

  // a failing run is recorded and the rest continue
  data::Dataset bad = train_set();
  bad.images[5] = std::numeric_limits<double>::infinity();
  Sweep f = lambda_sweep(c, {0.0, 1.0}, {0, 1}, bad, test_set());
  CHECK(f.records.size() == 4);
  for (const auto& r : f.records) CHECK(r.failed);

  CHECK_THROWS_AS(lambda_sweep(c, {}, {0}, train_set(), test_set()), Error);
}
