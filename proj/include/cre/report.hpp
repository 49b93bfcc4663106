#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cre/datasets.hpp"
#include "cre/harness.hpp"
#include "cre/models.hpp"

namespace cre::report {

struct Stats {
  std::size_t count = 0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
  double mean = 0.0;
  double half_width = 0.0;  // 1.96 * stderr; 0 for a single sample
  double whisker_low = 0.0, whisker_high = 0.0;  // furthest samples within 1.5 IQR of the box
  std::vector<double> outliers;
};

/// Quartiles by linear interpolation between order statistics.
Stats describe(std::vector<double> sample);

struct GroupKey {
  Family family = Family::fc;
  ModelSize size = ModelSize::small;
  std::size_t n = 0;
  std::string dataset;
  MaskingMode masking = MaskingMode::none;
  double lambda = 0.0;

  auto operator<=>(const GroupKey&) const = default;
};

struct SweepSummary {
  GroupKey key;
  std::vector<harness::MetricPair> sample;  // best-epoch metrics of each successful run
  Stats accuracy, mse;
};

/// One summary per group, ordered by key. Failed and epoch-less runs are
/// skipped; groups left empty are dropped with a warning.
std::vector<SweepSummary> summarize(const std::vector<harness::RunRecord>& records,
                                    std::vector<std::string>* warnings = nullptr);

/// Dual-axis box plot over lambda: accuracy on the left axis, MSE on the right
/// axis drawn inverted so that up is better for both. Needs >= 2 lambda groups.
std::string plot_tradeoff(const std::vector<SweepSummary>& summaries, const std::string& title = "");

struct SeriesPoint {
  std::size_t n = 0;
  double mean = 0.0;
  double half_width = 0.0;
};

struct Series {
  std::string label;
  std::vector<SeriesPoint> points;
};

/// Line plus confidence band per series over a log-scaled n axis. Needs >= 2
/// distinct n across all series; one-point series are drawn as a marker.
std::string plot_scaling(const std::vector<Series>& series, const std::string& metric, bool lower_is_better);

/// Series per lambda from summaries that differ only in n and lambda.
std::vector<Series> lambda_series(const std::vector<SweepSummary>& summaries, bool use_mse);

/// CSV "index,class,z0,..": the first `per_class` samples of every class in
/// dataset order, encoded in eval mode.
void export_latent(const CreModel& m, const data::Dataset& d, std::size_t per_class, std::ostream& out,
                   std::vector<std::string>* warnings = nullptr);

struct Image {
  std::size_t width = 0, height = 0, channels = 1;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels
};

/// [-1, 1] -> [0, 255], clamped.
std::uint8_t to_byte(double v);

/// Two columns (input | reconstruction), one row per image, separated by
/// `gutter` pixels of mid grey. At most 64 images.
Image reconstruction_grid(const Tensor& inputs, const Tensor& reconstructions, std::size_t gutter = 2);
/// Reconstructions from the unmasked encoding, eval mode.
Image reconstruction_grid(const CreModel& m, const Tensor& images, std::size_t gutter = 2);

/// Binary PGM (1 channel) or PPM (3 channels).
std::string encode_pnm(const Image& image);
void write_pnm(const std::string& path, const Image& image);

}  // namespace cre::report
