#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cre/datasets.hpp"
#include "cre/models.hpp"

namespace cre::harness {

/// {0.0, 0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 0.99, 1.0}
const std::vector<double>& canonical_lambdas();

struct RunConfig {
  Family family = Family::fc;
  ModelSize size = ModelSize::small;
  std::size_t n = 16;
  std::string dataset = "mnist";
  std::string data_root;  // empty: $CRE_DATA_ROOT, then "data"
  double lambda = 0.5;
  MaskingMode masking_mode = MaskingMode::none;
  double mask_ratio = 0.66;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  // With inputs in [-1, 1] and a ReLU latent, Adam at 1e-3 on the encoder
  // kills the latent units within a few dozen reconstruction steps; a slower
  // encoder and a fast decoder (which first fits the mean image) avoid that.
  double lr_encoder = 3e-4;
  double lr_decoder = 1e-2;
  double lr_classifier = 1e-3;
  std::uint64_t seed = 0;
  std::size_t limit = 0;  // 0: full training split
  double dropout = 0.3;
  double droppath = 0.2;
  std::size_t workers = 1;

  ModelSpec model_spec(const ImageShape& image) const;
  /// Throws Error for out-of-range values.
  void validate() const;
};

/// `key = value` lines; '#' starts a comment. Unknown keys, duplicate keys and
/// bad values raise ParseError naming the line.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);
/// Every key, in the canonical order, parseable by parse_config.
std::string format_config(const RunConfig& c);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

/// Stable id, e.g. "fc-small-n16-mnist-l0.5-none-s7".
std::string run_id(const RunConfig& c);

/// Independent run seed for a sweep point. Hashes the bits of lambda rather
/// than its grid index, so adding grid points never shifts existing runs.
std::uint64_t derive_seed(std::uint64_t base, double lambda, std::uint64_t repetition);

struct MetricSet {
  double accuracy = 0.0;
  double mse = 0.0;
  double loss_total = 0.0;
  double loss_mse = 0.0;
  double loss_ce = 0.0;
};

struct EpochRow {
  std::size_t epoch = 0;  // 1-based
  MetricSet train, test;
};

struct MetricPair {
  double accuracy = 0.0;
  double mse = 0.0;
};

struct RunRecord {
  std::string run_id;
  RunConfig config;
  std::vector<EpochRow> epochs;
  std::optional<std::size_t> best_accuracy_epoch;  // 1-based
  std::optional<std::size_t> best_mse_epoch;
  std::string checkpoint_accuracy;  // best-accuracy weights, if persisted
  std::string checkpoint_mse;
  bool failed = false;
  std::size_t failed_epoch = 0;
  std::string error;

  /// Test accuracy at the best-accuracy epoch and test MSE at the best-MSE epoch.
  MetricPair best() const;
};

/// Appends one epoch (which must follow the last) and updates both best
/// indices; ties keep the earlier epoch.
void record_metrics(RunRecord& record, const EpochRow& row);

struct RunOptions {
  std::string out_dir;  // empty: nothing written
  bool save_checkpoints = true;
};

/// Loads the configured dataset, then trains.
RunRecord run_training(const RunConfig& config, const RunOptions& options = {});
/// Trains on already-loaded splits (the training split is limited here).
RunRecord run_training(const RunConfig& config, const data::Dataset& train, const data::Dataset& test,
                       const RunOptions& options = {});

struct SweepRow {
  double lambda = 0.0;
  std::uint64_t repetition = 0;
  std::string run_id;
  bool failed = false;
  MetricPair best;
};

struct Sweep {
  std::vector<RunRecord> records;  // grid-major, then repetition
  std::vector<SweepRow> table;     // sorted by (lambda, repetition)
};

/// One run per (lambda, repetition), up to base.workers at a time. Run
/// failures are recorded and the sweep continues.
Sweep lambda_sweep(const RunConfig& base, const std::vector<double>& lambdas,
                   const std::vector<std::uint64_t>& repetitions, const data::Dataset& train,
                   const data::Dataset& test, const RunOptions& options = {});
Sweep lambda_sweep(const RunConfig& base, const std::vector<double>& lambdas,
                   const std::vector<std::uint64_t>& repetitions, const RunOptions& options = {});

/// Header plus one row per (epoch, split).
inline constexpr std::string_view kMetricsHeader =
    "run_id,family,size,n,dataset,lambda,masking_mode,seed,epoch,split,accuracy,mse,loss_total,loss_mse,loss_ce";
void write_metrics_csv(std::ostream& out, const std::vector<RunRecord>& records);
void write_metrics_csv(const std::string& path, const std::vector<RunRecord>& records);
/// Rebuilds records (config fields present in the CSV, epochs, best indices).
std::vector<RunRecord> read_metrics_csv(std::istream& in);
std::vector<RunRecord> read_metrics_csv(const std::string& path);

std::string record_json(const RunRecord& record);

}  // namespace cre::harness
