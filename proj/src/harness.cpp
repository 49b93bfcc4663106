#include "cre/harness.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "cre/adam.hpp"
#include "json.hpp"

namespace cre::harness {

namespace {

// Seed-stream tags.
constexpr std::uint64_t kLimitTag = 0x6c696d6974;
constexpr std::uint64_t kTrainTag = 0x747261696e;
constexpr std::uint64_t kEvalTag = 0x6576616c;
constexpr std::uint64_t kAugmentTag = 0x617567;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_real(const std::string& v, std::size_t line, const std::string& key) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ParseError("config line " + std::to_string(line) + ": " + key + " expects a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_count(const std::string& v, std::size_t line, const std::string& key) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ParseError("config line " + std::to_string(line) + ": " + key + " expects a non-negative integer, got '" + v +
                     "'");
  }
  return out;
}

template <class F>
auto parse_enum(F parse, const std::string& v, std::size_t line) {
  try {
    return parse(v);
  } catch (const Error& e) {
    throw ParseError("config line " + std::to_string(line) + ": " + e.what());
  }
}

std::size_t argmax_hits(const Tensor& logits, const std::vector<std::size_t>& labels) {
  const std::size_t K = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const auto row = logits.data.begin() + static_cast<std::ptrdiff_t>(b * K);
    hits += static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(K)) - row) == labels[b];
  }
  return hits;
}

// Test-split metrics. MSE uses the training loss variant (masked pixels only
// for v1) with masks fixed per batch index, so epochs are comparable.
// Accuracy always classifies the unmasked encoding.
MetricSet evaluate(const CreModel& m, const data::Dataset& d, std::uint64_t seed) {
  MetricSet s;
  const bool masked = m.spec().masking != MaskingMode::none;
  const auto batches = data::batch_iter(d.size(), 500, std::nullopt);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < batches.size(); ++k) {
    const data::Batch b = data::gather(d, batches[k]);
    Graph g;
    Rng rng(0);
    nn::ForwardContext ctx(g, false, rng);
    ctx.set_track_grads(false);
    Var x = ctx.constant(b.images);
    CreLoss loss = cre_loss(m, ctx, x, b.labels, mix_seed(mix_seed(seed, kEvalTag), k), LossGradients::joint);
    const double w = static_cast<double>(b.labels.size());
    s.loss_total += loss.total.value().item() * w;
    s.loss_mse += loss.mse.value().item() * w;
    s.loss_ce += loss.ce.value().item() * w;
    if (masked) {
      Encoded full = encode(m, ctx, x);
      hits += argmax_hits(classify(m, ctx, full).value(), b.labels);
    } else {
      hits += argmax_hits(loss.logits.value(), b.labels);
    }
  }
  const double n = static_cast<double>(d.size());
  s.loss_total /= n;
  s.loss_mse /= n;
  s.loss_ce /= n;
  s.mse = s.loss_mse;
  s.accuracy = static_cast<double>(hits) / n;
  return s;
}

void check_finite(double v, const char* what, std::size_t epoch) {
  if (!std::isfinite(v)) {
    throw NonFiniteError(std::string("non-finite ") + what + " in epoch " + std::to_string(epoch));
  }
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

const std::vector<double>& canonical_lambdas() {
  static const std::vector<double> grid{0.0, 0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 0.99, 1.0};
  return grid;
}

// ---------------------------------------------------------------- config

ModelSpec RunConfig::model_spec(const ImageShape& image) const {
  ModelSpec s;
  s.family = family;
  s.size = size;
  s.n = n;
  s.image = image;
  s.lambda = lambda;
  s.masking = masking_mode;
  s.mask_ratio = mask_ratio;
  s.dropout = dropout;
  s.droppath = droppath;
  s.seed = seed;
  return s;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error("config: " + what); };
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda must lie in [0, 1]");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in (0, 1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(droppath >= 0.0 && droppath < 1.0)) fail("droppath must lie in [0, 1)");
  if (batch_size == 0) fail("batch_size must be positive");
  if (workers == 0) fail("workers must be positive");
  if (n == 0) fail("n must be positive");
  for (double lr : {lr_encoder, lr_decoder, lr_classifier}) {
    if (!(lr > 0.0)) fail("learning rates must be positive");
  }
  if (dataset != "mnist" && dataset != "fashion_mnist" && dataset != "cifar10") {
    fail("dataset must be mnist, fashion_mnist or cifar10");
  }
}

RunConfig parse_config(std::string_view text) {
  RunConfig c;
  std::map<std::string, std::size_t> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string body = trim(raw);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError("config line " + std::to_string(line) + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string v = trim(std::string_view(body).substr(eq + 1));
    if (auto [it, fresh] = seen.emplace(key, line); !fresh) {
      throw ParseError("config line " + std::to_string(line) + ": duplicate key '" + key + "' (first on line " +
                       std::to_string(it->second) + ")");
    }
    if (key == "family") c.family = parse_enum(parse_family, v, line);
    else if (key == "size") c.size = parse_enum(parse_size, v, line);
    else if (key == "n") c.n = parse_count(v, line, key);
    else if (key == "dataset") c.dataset = v;
    else if (key == "data_root") c.data_root = v;
    else if (key == "lambda") c.lambda = parse_real(v, line, key);
    else if (key == "masking_mode") c.masking_mode = parse_enum(parse_masking, v, line);
    else if (key == "mask_ratio") c.mask_ratio = parse_real(v, line, key);
    else if (key == "epochs") c.epochs = parse_count(v, line, key);
    else if (key == "batch_size") c.batch_size = parse_count(v, line, key);
    else if (key == "lr_encoder") c.lr_encoder = parse_real(v, line, key);
    else if (key == "lr_decoder") c.lr_decoder = parse_real(v, line, key);
    else if (key == "lr_classifier") c.lr_classifier = parse_real(v, line, key);
    else if (key == "seed") c.seed = parse_count(v, line, key);
    else if (key == "limit") c.limit = parse_count(v, line, key);
    else if (key == "dropout") c.dropout = parse_real(v, line, key);
    else if (key == "droppath") c.droppath = parse_real(v, line, key);
    else if (key == "workers") c.workers = parse_count(v, line, key);
    else throw ParseError("config line " + std::to_string(line) + ": unknown key '" + key + "'");
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw ParseError(e.what());
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string format_config(const RunConfig& c) {
  std::ostringstream o;
  o << "family = " << to_string(c.family) << "\n"
    << "size = " << to_string(c.size) << "\n"
    << "n = " << c.n << "\n"
    << "dataset = " << c.dataset << "\n"
    << "data_root = " << c.data_root << "\n"
    << "lambda = " << format_double(c.lambda) << "\n"
    << "masking_mode = " << to_string(c.masking_mode) << "\n"
    << "mask_ratio = " << format_double(c.mask_ratio) << "\n"
    << "epochs = " << c.epochs << "\n"
    << "batch_size = " << c.batch_size << "\n"
    << "lr_encoder = " << format_double(c.lr_encoder) << "\n"
    << "lr_decoder = " << format_double(c.lr_decoder) << "\n"
    << "lr_classifier = " << format_double(c.lr_classifier) << "\n"
    << "seed = " << c.seed << "\n"
    << "limit = " << c.limit << "\n"
    << "dropout = " << format_double(c.dropout) << "\n"
    << "droppath = " << format_double(c.droppath) << "\n"
    << "workers = " << c.workers << "\n";
  return o.str();
}

std::string run_id(const RunConfig& c) {
  std::ostringstream o;
  o << to_string(c.family) << '-' << to_string(c.size) << "-n" << c.n << '-' << c.dataset << "-l"
    << format_double(c.lambda) << '-' << to_string(c.masking_mode) << "-s" << c.seed;
  return o.str();
}

std::uint64_t derive_seed(std::uint64_t base, double lambda, std::uint64_t repetition) {
  return mix_seed(mix_seed(base, std::bit_cast<std::uint64_t>(lambda)), repetition);
}

// ---------------------------------------------------------------- records

MetricPair RunRecord::best() const {
  MetricPair p;
  if (best_accuracy_epoch) p.accuracy = epochs.at(*best_accuracy_epoch - 1).test.accuracy;
  if (best_mse_epoch) p.mse = epochs.at(*best_mse_epoch - 1).test.mse;
  return p;
}

void record_metrics(RunRecord& r, const EpochRow& row) {
  const std::size_t expected = r.epochs.size() + 1;
  if (row.epoch != expected) {
    throw Error("record_metrics: epoch " + std::to_string(row.epoch) + " out of order (expected " +
                std::to_string(expected) + ")");
  }
  r.epochs.push_back(row);
  if (!r.best_accuracy_epoch || row.test.accuracy > r.epochs[*r.best_accuracy_epoch - 1].test.accuracy) {
    r.best_accuracy_epoch = row.epoch;
  }
  if (!r.best_mse_epoch || row.test.mse < r.epochs[*r.best_mse_epoch - 1].test.mse) r.best_mse_epoch = row.epoch;
}

// ---------------------------------------------------------------- training

RunRecord run_training(const RunConfig& config, const RunOptions& options) {
  config.validate();
  const std::string root = data::data_root(config.data_root);
  const data::Dataset train = data::load_named(config.dataset, root, data::Split::train);
  const data::Dataset test = data::load_named(config.dataset, root, data::Split::test);
  return run_training(config, train, test, options);
}

RunRecord run_training(const RunConfig& cfg, const data::Dataset& train_full, const data::Dataset& test,
                       const RunOptions& options) {
  namespace fs = std::filesystem;
  cfg.validate();
  RunRecord rec;
  rec.run_id = run_id(cfg);
  rec.config = cfg;
  fs::path dir;
  if (!options.out_dir.empty()) {
    dir = fs::path(options.out_dir) / rec.run_id;
    fs::create_directories(dir);
  }

  const data::Dataset train = data::limit(train_full, cfg.limit, mix_seed(cfg.seed, kLimitTag));
  auto model = build_cre(cfg.model_spec(train.image()));
  nn::Adam enc(model->encoder.trainable(), {.step_size = cfg.lr_encoder});
  nn::Adam dec(model->decoder.trainable(), {.step_size = cfg.lr_decoder});
  nn::Adam cls(model->classifier.trainable(), {.step_size = cfg.lr_classifier});
  Rng rng(mix_seed(cfg.seed, kTrainTag));
  const bool augment = cfg.dataset == "cifar10";

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRow row;
    row.epoch = epoch;
    try {
      const auto batches = data::batch_iter(train.size(), cfg.batch_size, mix_seed(cfg.seed, epoch));
      std::size_t hits = 0;
      for (std::size_t k = 0; k < batches.size(); ++k) {
        data::Batch b = data::gather(train, batches[k]);
        const std::uint64_t step_seed = mix_seed(mix_seed(cfg.seed, epoch), k);
        if (augment) b.images = data::augment_rotate(b.images, 15.0, mix_seed(step_seed, kAugmentTag));
        Graph g;
        nn::ForwardContext ctx(g, true, rng);
        CreLoss loss = cre_loss(*model, ctx, ctx.constant(b.images), b.labels, step_seed);
        const double w = static_cast<double>(b.labels.size());
        check_finite(loss.total.value().item(), "loss", epoch);
        row.train.loss_total += loss.total.value().item() * w;
        row.train.loss_mse += loss.mse.value().item() * w;
        row.train.loss_ce += loss.ce.value().item() * w;
        hits += argmax_hits(loss.logits.value(), b.labels);
        ctx.accumulate_grads(g.backward(loss.objective));
        enc.step();
        dec.step();
        cls.step();
        enc.zero_grad();
        dec.zero_grad();
        cls.zero_grad();
      }
      const double n = static_cast<double>(train.size());
      row.train.loss_total /= n;
      row.train.loss_mse /= n;
      row.train.loss_ce /= n;
      row.train.mse = row.train.loss_mse;
      row.train.accuracy = static_cast<double>(hits) / n;
      row.test = evaluate(*model, test, cfg.seed);
      check_finite(row.test.loss_total, "test loss", epoch);
    } catch (const NonFiniteError& e) {
      rec.failed = true;
      rec.failed_epoch = epoch;
      rec.error = e.what();
      break;
    }
    const auto prev_acc = rec.best_accuracy_epoch, prev_mse = rec.best_mse_epoch;
    record_metrics(rec, row);
    if (!dir.empty() && options.save_checkpoints) {
      if (rec.best_accuracy_epoch != prev_acc) {
        rec.checkpoint_accuracy = (dir / "best_accuracy.crew").string();
        save_model(rec.checkpoint_accuracy, *model);
      }
      if (rec.best_mse_epoch != prev_mse) {
        rec.checkpoint_mse = (dir / "best_mse.crew").string();
        save_model(rec.checkpoint_mse, *model);
      }
    }
  }

  if (!dir.empty()) {
    write_metrics_csv((dir / "metrics.csv").string(), {rec});
    write_text(dir / "record.json", record_json(rec));
    write_text(dir / "config.txt", format_config(cfg));
  }
  return rec;
}

// ---------------------------------------------------------------- sweeps

Sweep lambda_sweep(const RunConfig& base, const std::vector<double>& lambdas,
                   const std::vector<std::uint64_t>& repetitions, const data::Dataset& train,
                   const data::Dataset& test, const RunOptions& options) {
  if (lambdas.empty() || repetitions.empty()) throw Error("lambda_sweep: empty grid or seed list");
  base.validate();
  std::vector<RunConfig> configs;
  std::vector<SweepRow> rows;
  for (double lambda : lambdas) {
    for (auto rep : repetitions) {
      RunConfig c = base;
      c.lambda = lambda;
      c.seed = derive_seed(base.seed, lambda, rep);
      configs.push_back(c);
      rows.push_back({lambda, rep, run_id(c), false, {}});
    }
  }
  Sweep sweep;
  sweep.records.resize(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      RunRecord& slot = sweep.records[i];  // each slot has exactly one writer
      try {
        slot = run_training(configs[i], train, test, options);
      } catch (const std::exception& e) {
        slot = RunRecord{};
        slot.run_id = rows[i].run_id;
        slot.config = configs[i];
        slot.failed = true;
        slot.error = e.what();
      }
    }
  };
  const std::size_t threads = std::min(base.workers, configs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].failed = sweep.records[i].failed;
    rows[i].best = sweep.records[i].best();
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.lambda != b.lambda ? a.lambda < b.lambda : a.repetition < b.repetition;
  });
  sweep.table = std::move(rows);
  if (!options.out_dir.empty()) write_metrics_csv((std::filesystem::path(options.out_dir) / "metrics.csv").string(),
                                                  sweep.records);
  return sweep;
}

Sweep lambda_sweep(const RunConfig& base, const std::vector<double>& lambdas,
                   const std::vector<std::uint64_t>& repetitions, const RunOptions& options) {
  base.validate();
  const std::string root = data::data_root(base.data_root);
  const data::Dataset train = data::load_named(base.dataset, root, data::Split::train);
  const data::Dataset test = data::load_named(base.dataset, root, data::Split::test);
  return lambda_sweep(base, lambdas, repetitions, train, test, options);
}

// ---------------------------------------------------------------- files

void write_metrics_csv(std::ostream& out, const std::vector<RunRecord>& records) {
  out << kMetricsHeader << '\n';
  for (const auto& r : records) {
    const RunConfig& c = r.config;
    const std::string prefix = r.run_id + ',' + std::string(to_string(c.family)) + ',' +
                               std::string(to_string(c.size)) + ',' + std::to_string(c.n) + ',' + c.dataset + ',' +
                               format_double(c.lambda) + ',' + std::string(to_string(c.masking_mode)) + ',' +
                               std::to_string(c.seed) + ',';
    for (const auto& row : r.epochs) {
      for (auto split : {data::Split::train, data::Split::test}) {
        const MetricSet& m = split == data::Split::train ? row.train : row.test;
        out << prefix << row.epoch << ',' << data::to_string(split) << ',' << format_double(m.accuracy) << ','
            << format_double(m.mse) << ',' << format_double(m.loss_total) << ',' << format_double(m.loss_mse) << ','
            << format_double(m.loss_ce) << '\n';
      }
    }
  }
}

void write_metrics_csv(const std::string& path, const std::vector<RunRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  write_metrics_csv(out, records);
}

std::vector<RunRecord> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kMetricsHeader) throw ParseError("metrics CSV: missing or wrong header");
  std::vector<RunRecord> records;
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::map<std::size_t, EpochRow>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(trim(line));
    if (f.size() != 15) {
      throw ParseError("metrics CSV line " + std::to_string(lineno) + ": expected 15 fields, got " +
                       std::to_string(f.size()));
    }
    auto [it, fresh] = index.emplace(f[0], records.size());
    if (fresh) {
      RunRecord r;
      r.run_id = f[0];
      r.config.family = parse_enum(parse_family, f[1], lineno);
      r.config.size = parse_enum(parse_size, f[2], lineno);
      r.config.n = parse_count(f[3], lineno, "n");
      r.config.dataset = f[4];
      r.config.lambda = parse_real(f[5], lineno, "lambda");
      r.config.masking_mode = parse_enum(parse_masking, f[6], lineno);
      r.config.seed = parse_count(f[7], lineno, "seed");
      records.push_back(std::move(r));
    }
    const std::size_t epoch = parse_count(f[8], lineno, "epoch");
    MetricSet m{parse_real(f[10], lineno, "accuracy"), parse_real(f[11], lineno, "mse"),
                parse_real(f[12], lineno, "loss_total"), parse_real(f[13], lineno, "loss_mse"),
                parse_real(f[14], lineno, "loss_ce")};
    EpochRow& row = rows[f[0]][epoch];
    row.epoch = epoch;
    if (f[9] == "train") row.train = m;
    else if (f[9] == "test") row.test = m;
    else throw ParseError("metrics CSV line " + std::to_string(lineno) + ": unknown split '" + f[9] + "'");
  }
  for (auto& r : records) {
    for (auto& [epoch, row] : rows[r.run_id]) record_metrics(r, row);
  }
  return records;
}

std::vector<RunRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return read_metrics_csv(in);
}

std::string record_json(const RunRecord& r) {
  using nlohmann::json;
  const RunConfig& c = r.config;
  json cfg = {{"family", to_string(c.family)},
              {"size", to_string(c.size)},
              {"n", c.n},
              {"dataset", c.dataset},
              {"data_root", c.data_root},
              {"lambda", c.lambda},
              {"masking_mode", to_string(c.masking_mode)},
              {"mask_ratio", c.mask_ratio},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr_encoder", c.lr_encoder},
              {"lr_decoder", c.lr_decoder},
              {"lr_classifier", c.lr_classifier},
              {"seed", c.seed},
              {"limit", c.limit},
              {"dropout", c.dropout},
              {"droppath", c.droppath},
              {"workers", c.workers}};
  json epochs = json::array();
  auto metrics = [](const MetricSet& m) {
    return json{{"accuracy", m.accuracy},
                {"mse", m.mse},
                {"loss_total", m.loss_total},
                {"loss_mse", m.loss_mse},
                {"loss_ce", m.loss_ce}};
  };
  for (const auto& e : r.epochs) epochs.push_back({{"epoch", e.epoch}, {"train", metrics(e.train)}, {"test", metrics(e.test)}});
  json j = {{"run_id", r.run_id},
            {"config", cfg},
            {"epochs", epochs},
            {"best_accuracy_epoch", r.best_accuracy_epoch ? json(*r.best_accuracy_epoch) : json(nullptr)},
            {"best_mse_epoch", r.best_mse_epoch ? json(*r.best_mse_epoch) : json(nullptr)},
            {"checkpoint_accuracy", r.checkpoint_accuracy},
            {"checkpoint_mse", r.checkpoint_mse},
            {"failed", r.failed},
            {"failed_epoch", r.failed_epoch},
            {"error", r.error}};
  return j.dump(2) + "\n";
}

}  // namespace cre::harness
