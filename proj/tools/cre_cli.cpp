#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "cre/baselines.hpp"
#include "cre/harness.hpp"
#include "cre/pcn.hpp"
#include "cre/report.hpp"

namespace fs = std::filesystem;
using namespace cre;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;  // key=value
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.path, "configuration file (key = value lines)")->check(CLI::ExistingFile);
  cmd->add_option("--set", a.overrides, "override a configuration key, e.g. --set lambda=0.9");
}

// Overrides replace the key's line in the canonical text, so they go through
// the same parser (and its errors) as the file.
harness::RunConfig resolve(const ConfigArgs& a) {
  harness::RunConfig c = a.path.empty() ? harness::RunConfig{} : harness::load_config(a.path);
  for (const auto& o : a.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + o + "'");
    const std::string key = o.substr(0, eq), value = o.substr(eq + 1);
    std::istringstream in(harness::format_config(c));
    std::string text, line;
    bool found = false;
    while (std::getline(in, line)) {
      if (line.rfind(key + " =", 0) == 0) {
        line = key + " = " + value;
        found = true;
      }
      text += line + '\n';
    }
    if (!found) text += key + " = " + value + '\n';
    try {
      c = harness::parse_config(text);
    } catch (const ParseError& e) {
      throw Error("--set " + o + ": " + e.what());
    }
  }
  return c;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    out.push_back(std::stod(item, &used));
    if (used != item.size()) throw Error("bad number '" + item + "' in list");
  }
  return out;
}

std::string fmt(double v) { return harness::format_double(v); }

void print_table(const std::vector<harness::SweepRow>& rows) {
  std::printf("%-40s %8s %6s %10s %10s\n", "run_id", "lambda", "rep", "accuracy", "mse");
  for (const auto& r : rows) {
    if (r.failed) {
      std::printf("%-40s %8s %6llu %10s %10s\n", r.run_id.c_str(), fmt(r.lambda).c_str(),
                  static_cast<unsigned long long>(r.repetition), "failed", "-");
    } else {
      std::printf("%-40s %8s %6llu %10.4f %10.5f\n", r.run_id.c_str(), fmt(r.lambda).c_str(),
                  static_cast<unsigned long long>(r.repetition), r.best.accuracy, r.best.mse);
    }
  }
}

int cmd_train(const ConfigArgs& a, const std::string& out, bool no_checkpoints) {
  const harness::RunConfig c = resolve(a);
  const harness::RunRecord r = harness::run_training(c, {out, !no_checkpoints});
  for (const auto& e : r.epochs) {
    std::printf("epoch %zu  train loss %.5f  test accuracy %.4f  test mse %.5f\n", e.epoch, e.train.loss_total,
                e.test.accuracy, e.test.mse);
  }
  if (r.failed) {
    std::fprintf(stderr, "%s failed at epoch %zu: %s\n", r.run_id.c_str(), r.failed_epoch, r.error.c_str());
    return 1;
  }
  if (!r.epochs.empty()) {
    const auto best = r.best();
    std::printf("%s  best accuracy %.4f (epoch %zu)  best mse %.5f (epoch %zu)\n", r.run_id.c_str(), best.accuracy,
                *r.best_accuracy_epoch, best.mse, *r.best_mse_epoch);
  }
  return 0;
}

int cmd_sweep(const ConfigArgs& a, const std::string& lambdas, std::size_t seeds, std::size_t workers,
              const std::string& out) {
  harness::RunConfig c = resolve(a);
  if (workers) c.workers = workers;
  const std::vector<double> grid = lambdas.empty() ? harness::canonical_lambdas() : parse_list(lambdas);
  std::vector<std::uint64_t> reps;
  for (std::size_t i = 0; i < seeds; ++i) reps.push_back(i);
  const harness::Sweep s = harness::lambda_sweep(c, grid, reps, {out, true});
  print_table(s.table);
  for (const auto& r : s.records)
    if (r.failed) std::fprintf(stderr, "%s failed at epoch %zu: %s\n", r.run_id.c_str(), r.failed_epoch, r.error.c_str());
  return 0;
}

struct BaselineArgs {
  std::string dataset = "mnist";
  std::string data_root;
  std::vector<std::size_t> ns{16};
  std::size_t seeds = 1;
  std::size_t epochs = 20;
  std::size_t limit = 0;
  std::string kind = "both";
  std::string out;
};

int cmd_baseline(const BaselineArgs& a) {
  const std::string root = data::data_root(a.data_root);
  data::Dataset train = data::load_named(a.dataset, root, data::Split::train);
  const data::Dataset test = data::load_named(a.dataset, root, data::Split::test);
  if (a.limit) train = data::limit(train, a.limit, 0);
  const std::size_t d = train.images.size() / train.size();

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw Error("cannot write " + a.out);
  }
  std::ostream& out = a.out.empty() ? std::cout : file;
  out << "kind,n,seed,accuracy,mse\n";
  for (std::size_t n : a.ns) {
    std::optional<baselines::PcaBasis> basis;
    if (a.kind != "rp") basis = baselines::fit_pca(train.images, n);
    for (std::size_t s = 0; s < a.seeds; ++s) {
      baselines::HeadOptions opts;
      opts.epochs = a.epochs;
      opts.seed = s;
      auto run = [&](const char* name, baselines::FrozenProjection proj) {
        const auto cls = baselines::train_head(proj, baselines::HeadKind::classifier, train, test, opts);
        const auto dec = baselines::train_head(proj, baselines::HeadKind::decoder, train, test, opts);
        out << name << ',' << n << ',' << s << ',' << fmt(cls.best_accuracy) << ',' << fmt(dec.best_mse) << '\n';
        out.flush();
      };
      if (basis) run("pca", baselines::frozen(*basis));
      if (a.kind != "pca") run("rp", baselines::frozen(baselines::RandomProjection(d, n, s)));
    }
  }
  return 0;
}

int cmd_pcn_demo(const std::string& sizes, double step, std::size_t iterations, std::uint64_t seed, bool identity) {
  pcn::Config cfg;
  for (double v : parse_list(sizes)) cfg.sizes.push_back(static_cast<std::size_t>(v));
  cfg.step = step;
  cfg.iterations = iterations;
  cfg.tolerance = 0.0;
  cfg.activation = identity ? pcn::Activation::identity : pcn::Activation::tanh;
  const pcn::Model m(cfg, seed);
  Rng rng(mix_seed(seed, 1));
  pcn::State s = pcn::prepare(m, pcn::Mode::classify, Tensor::randn({1, cfg.sizes.front()}, rng));
  // start from a random state so there is energy to remove
  for (std::size_t l = 1; l < s.x.size(); ++l) s.x[l] = Tensor::randn(s.x[l].shape, rng);
  pcn::refresh(m, s);
  const pcn::Trace t = pcn::infer(m, s);
  std::printf("iteration,energy\n");
  for (std::size_t i = 0; i < t.energy.size(); ++i) std::printf("%zu,%.17g\n", i, t.energy[i]);
  return 0;
}

struct ReportArgs {
  std::string metrics;
  std::string baselines;
  std::string out = "report";
  std::string kind = "tradeoff";
  std::string checkpoint;
  std::string dataset;
  std::string data_root;
  std::size_t per_class = 50;
  std::size_t count = 8;
};

std::string group_name(const report::GroupKey& k, bool with_n) {
  std::string s = std::string(to_string(k.family)) + "-" + std::string(to_string(k.size));
  if (with_n) s += "-n" + std::to_string(k.n);
  return s + "-" + k.dataset + "-" + std::string(to_string(k.masking));
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write " + p.string());
  f << text;
  std::printf("wrote %s\n", p.string().c_str());
}

void write_summary(const fs::path& p, const std::vector<report::SweepSummary>& sums) {
  std::ostringstream o;
  o << "family,size,n,dataset,masking_mode,lambda,runs,metric,mean,half_width,min,q1,median,q3,max\n";
  for (const auto& s : sums) {
    for (int m = 0; m < 2; ++m) {
      const auto& st = m ? s.mse : s.accuracy;
      o << to_string(s.key.family) << ',' << to_string(s.key.size) << ',' << s.key.n << ',' << s.key.dataset << ','
        << to_string(s.key.masking) << ',' << fmt(s.key.lambda) << ',' << s.sample.size() << ','
        << (m ? "mse" : "accuracy") << ',' << fmt(st.mean) << ',' << fmt(st.half_width) << ',' << fmt(st.min) << ','
        << fmt(st.q1) << ',' << fmt(st.median) << ',' << fmt(st.q3) << ',' << fmt(st.max) << '\n';
    }
  }
  write_text(p, o.str());
}

// kind,n,seed,accuracy,mse rows from `cre baseline`, as one series per kind.
std::map<std::string, std::pair<report::Series, report::Series>> read_baselines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != "kind,n,seed,accuracy,mse") throw Error(path + ": unexpected header '" + line + "'");
  std::map<std::pair<std::string, std::size_t>, std::pair<std::vector<double>, std::vector<double>>> samples;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string kind, n, seed, acc, mse;
    if (!std::getline(row, kind, ',') || !std::getline(row, n, ',') || !std::getline(row, seed, ',') ||
        !std::getline(row, acc, ',') || !std::getline(row, mse)) {
      throw Error(path + ": malformed row '" + line + "'");
    }
    auto& s = samples[{kind, std::stoul(n)}];
    s.first.push_back(std::stod(acc));
    s.second.push_back(std::stod(mse));
  }
  std::map<std::string, std::pair<report::Series, report::Series>> out;
  for (const auto& [key, s] : samples) {
    auto& series = out[key.first];
    series.first.label = series.second.label = key.first;
    const auto a = report::describe(s.first), m = report::describe(s.second);
    series.first.points.push_back({key.second, a.mean, a.half_width});
    series.second.points.push_back({key.second, m.mean, m.half_width});
  }
  return out;
}

data::Dataset report_dataset(const ReportArgs& a, const CreModel& m) {
  const std::string name = a.dataset.empty() ? std::string(m.spec().image.channels == 3 ? "cifar10" : "mnist")
                                             : a.dataset;
  return data::load_named(name, data::data_root(a.data_root), data::Split::test);
}

int cmd_report(const ReportArgs& a) {
  fs::create_directories(a.out);
  const fs::path out(a.out);
  if (a.kind == "latent" || a.kind == "recon") {
    if (a.checkpoint.empty()) throw Error("--kind " + a.kind + " needs --checkpoint");
    const auto m = load_model(a.checkpoint);
    const data::Dataset d = report_dataset(a, *m);
    if (a.kind == "latent") {
      std::ostringstream csv;
      std::vector<std::string> warnings;
      report::export_latent(*m, d, a.per_class, csv, &warnings);
      for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      write_text(out / "latent.csv", csv.str());
    } else {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < std::min(a.count, d.size()); ++i) idx.push_back(i);
      const auto img = report::reconstruction_grid(*m, data::gather(d, idx).images);
      write_text(out / (img.channels == 1 ? "recon.pgm" : "recon.ppm"), report::encode_pnm(img));
    }
    return 0;
  }
  if (a.metrics.empty()) throw Error("--kind " + a.kind + " needs --metrics");
  std::vector<std::string> warnings;
  const auto sums = report::summarize(harness::read_metrics_csv(a.metrics), &warnings);
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  write_summary(out / "summary.csv", sums);

  if (a.kind == "tradeoff") {
    std::map<std::string, std::vector<report::SweepSummary>> groups;
    for (const auto& s : sums) groups[group_name(s.key, true)].push_back(s);
    for (const auto& [name, g] : groups) {
      if (g.size() < 2) {
        std::fprintf(stderr, "skipping %s: fewer than two lambda values\n", name.c_str());
        continue;
      }
      write_text(out / ("tradeoff-" + name + ".svg"), report::plot_tradeoff(g, name));
    }
    return 0;
  }
  if (a.kind == "scaling") {
    std::map<std::string, std::vector<report::SweepSummary>> groups;
    for (const auto& s : sums) groups[group_name(s.key, false)].push_back(s);
    const auto extra = a.baselines.empty() ? decltype(read_baselines("")){} : read_baselines(a.baselines);
    for (const auto& [name, g] : groups) {
      for (int use_mse = 0; use_mse < 2; ++use_mse) {
        auto series = report::lambda_series(g, use_mse);
        for (const auto& [kind, s] : extra) series.push_back(use_mse ? s.second : s.first);
        const std::string metric = use_mse ? "mse" : "accuracy";
        write_text(out / ("scaling-" + metric + "-" + name + ".svg"), report::plot_scaling(series, metric, use_mse));
      }
    }
    return 0;
  }
  throw Error("unknown report kind '" + a.kind + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Classification-reconstruction encoder experiments"};
  app.require_subcommand(1);

  ConfigArgs train_cfg;
  std::string train_out;
  bool no_checkpoints = false;
  auto* train = app.add_subcommand("train", "train one run");
  add_config_options(train, train_cfg);
  train->add_option("--out", train_out, "directory for metrics, record and best checkpoints");
  train->add_flag("--no-checkpoints", no_checkpoints, "do not write .crew checkpoints");

  ConfigArgs sweep_cfg;
  std::string lambdas, sweep_out;
  std::size_t seeds = 1, workers = 0;
  auto* sweep = app.add_subcommand("sweep", "one run per (lambda, seed)");
  add_config_options(sweep, sweep_cfg);
  sweep->add_option("--lambdas", lambdas, "comma-separated grid (default: the canonical 12 values)");
  sweep->add_option("--seeds", seeds, "repetitions per lambda")->check(CLI::PositiveNumber);
  sweep->add_option("--workers", workers, "concurrent runs (default: workers from the config)");
  sweep->add_option("--out", sweep_out, "output directory");

  BaselineArgs base;
  auto* baseline = app.add_subcommand("baseline", "PCA and random-projection heads");
  baseline->add_option("--dataset", base.dataset)->check(CLI::IsMember({"mnist", "fashion_mnist", "cifar10"}));
  baseline->add_option("--data-root", base.data_root);
  baseline->add_option("--n", base.ns, "representation sizes")->expected(1, -1);
  baseline->add_option("--seeds", base.seeds)->check(CLI::PositiveNumber);
  baseline->add_option("--epochs", base.epochs);
  baseline->add_option("--limit", base.limit, "training images (0: all)");
  baseline->add_option("--kind", base.kind)->check(CLI::IsMember({"pca", "rp", "both"}));
  baseline->add_option("--out", base.out, "CSV path (default: stdout)");

  std::string sizes = "8,6,4";
  double step = 0.05;
  std::size_t iterations = 200;
  std::uint64_t pcn_seed = 0;
  bool identity = false;
  auto* demo = app.add_subcommand("pcn-demo", "print the energy of one PCN inference as CSV");
  demo->add_option("--sizes", sizes, "layer widths, bottom first");
  demo->add_option("--step", step);
  demo->add_option("--iterations", iterations);
  demo->add_option("--seed", pcn_seed);
  demo->add_flag("--identity", identity, "identity activation instead of tanh");

  ReportArgs rep;
  auto* rpt = app.add_subcommand("report", "plots and exports from a metrics CSV or checkpoint");
  rpt->add_option("--metrics", rep.metrics, "metrics CSV from train or sweep")->check(CLI::ExistingFile);
  rpt->add_option("--out", rep.out, "output directory");
  rpt->add_option("--kind", rep.kind)->check(CLI::IsMember({"tradeoff", "scaling", "latent", "recon"}));
  rpt->add_option("--baselines", rep.baselines, "baseline CSV to add pca/rp series to scaling plots")
      ->check(CLI::ExistingFile);
  rpt->add_option("--checkpoint", rep.checkpoint, ".crew model for latent and recon")->check(CLI::ExistingFile);
  rpt->add_option("--dataset", rep.dataset, "test split to encode (default from the model's image shape)");
  rpt->add_option("--data-root", rep.data_root);
  rpt->add_option("--per-class", rep.per_class, "latent rows per class");
  rpt->add_option("--count", rep.count, "images in the reconstruction grid")->check(CLI::Range(1, 64));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(train_cfg, train_out, no_checkpoints);
    if (*sweep) return cmd_sweep(sweep_cfg, lambdas, seeds, workers, sweep_out);
    if (*baseline) return cmd_baseline(base);
    if (*demo) return cmd_pcn_demo(sizes, step, iterations, pcn_seed, identity);
    if (*rpt) return cmd_report(rep);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
