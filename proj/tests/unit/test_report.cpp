#include <algorithm>
#include <cmath>
#include <regex>
#include <sstream>

#include "cre/report.hpp"
#include "doctest.h"
#include "support/synthetic.hpp"

using namespace cre;
using namespace cre::report;

namespace {

harness::RunRecord record(double lambda, std::uint64_t seed, double accuracy, double mse, std::size_t n = 16) {
  harness::RunRecord r;
  r.config.lambda = lambda;
  r.config.seed = seed;
  r.config.n = n;
  r.run_id = harness::run_id(r.config);
  harness::EpochRow row;
  row.epoch = 1;
  row.test.accuracy = accuracy;
  row.test.mse = mse;
  harness::record_metrics(r, row);
  return r;
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t hits = 0;
  for (auto p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++hits;
  return hits;
}

// Tags balance and every attribute value is quoted.
bool well_formed(const std::string& xml) {
  std::vector<std::string> open;
  std::size_t i = xml.find("<svg");
  if (i == std::string::npos) return false;
  while ((i = xml.find('<', i)) != std::string::npos) {
    const std::size_t end = xml.find('>', i);
    if (end == std::string::npos) return false;
    const std::string tag = xml.substr(i + 1, end - i - 1);
    if (count(tag, "\"") % 2) return false;
    if (tag[0] == '/') {
      if (open.empty() || open.back() != tag.substr(1)) return false;
      open.pop_back();
    } else if (tag.back() != '/') {
      open.push_back(tag.substr(0, tag.find_first_of(" \n")));
    }
    i = end;
  }
  return open.empty();
}

double attribute(const std::string& text, const std::string& prefix, const std::string& name) {
  const auto at = text.find(prefix);
  REQUIRE(at != std::string::npos);
  const auto key = text.find(name + "=\"", at);
  return std::stod(text.substr(key + name.size() + 2));
}

std::vector<std::pair<double, double>> points(const std::string& svg, const std::string& cls) {
  std::smatch m;
  REQUIRE(std::regex_search(svg, m, std::regex("class=\"" + cls + "\" points=\"([^\"]*)\"")));
  std::vector<std::pair<double, double>> out;
  std::istringstream in(m[1].str());
  std::string pair;
  while (in >> pair) {
    const auto comma = pair.find(',');
    out.emplace_back(std::stod(pair.substr(0, comma)), std::stod(pair.substr(comma + 1)));
  }
  return out;
}

}  // namespace

TEST_CASE("describe") {
  Stats s = describe({5, 3, 1, 4, 2});
  CHECK(s.q1 == 2.0);
  CHECK(s.median == 3.0);
  CHECK(s.q3 == 4.0);
  CHECK(s.mean == 3.0);
  CHECK(s.half_width == doctest::Approx(1.96 * std::sqrt(2.5) / std::sqrt(5.0)));
  CHECK(s.outliers.empty());

  Stats one = describe({0.7});
  CHECK(one.q1 == 0.7);
  CHECK(one.median == 0.7);
  CHECK(one.q3 == 0.7);
  CHECK(one.half_width == 0.0);

  Stats even = describe({1, 2, 3, 4});
  CHECK(even.q1 == 1.75);
  CHECK(even.median == 2.5);
  CHECK(even.q3 == 3.25);

  Stats far = describe({1, 2, 3, 4, 100});
  REQUIRE(far.outliers.size() == 1);
  CHECK(far.outliers[0] == 100.0);
  CHECK(far.whisker_high == 4.0);
  CHECK(far.whisker_low == 1.0);
}

TEST_CASE("summarize") {
  std::vector<harness::RunRecord> rs = {record(0.0, 0, 0.9, 0.3), record(0.0, 1, 0.8, 0.25),
                                        record(0.0, 2, 0.85, 0.35), record(1.0, 0, 0.2, 0.1)};
  harness::RunRecord bad = record(1.0, 1, 0.0, 0.0);
  bad.failed = true;
  rs.push_back(bad);
  std::vector<std::string> warnings;
  auto sums = summarize(rs, &warnings);
  REQUIRE(sums.size() == 2);
  CHECK(warnings.size() == 1);
  CHECK(sums[0].key.lambda == 0.0);
  CHECK(sums[0].sample.size() == 3);
  CHECK(sums[1].sample.size() == 1);
  CHECK(sums[1].accuracy.half_width == 0.0);
  for (const auto& s : sums) {
    CHECK(s.accuracy.q1 <= s.accuracy.median);
    CHECK(s.accuracy.median <= s.accuracy.q3);
    CHECK(s.mse.half_width >= 0.0);
  }

  // permutation invariance
  auto shuffled = rs;
  std::reverse(shuffled.begin(), shuffled.end());
  std::swap(shuffled[1], shuffled[3]);
  auto again = summarize(shuffled);
  CHECK(plot_tradeoff(again) == plot_tradeoff(sums));
  CHECK(again[0].accuracy.mean == sums[0].accuracy.mean);

  // scale covariance of the MSE statistics
  auto scaled = rs;
  for (auto& r : scaled)
    for (auto& e : r.epochs) e.test.mse *= 2.0;
  auto sc = summarize(scaled);
  for (std::size_t g = 0; g < sums.size(); ++g) {
    CHECK(sc[g].mse.q1 == 2.0 * sums[g].mse.q1);
    CHECK(sc[g].mse.median == 2.0 * sums[g].mse.median);
    CHECK(sc[g].mse.q3 == 2.0 * sums[g].mse.q3);
    CHECK(sc[g].mse.mean == 2.0 * sums[g].mse.mean);
    CHECK(sc[g].mse.half_width == 2.0 * sums[g].mse.half_width);
  }

  // a group with only failed runs is dropped
  std::vector<std::string> dropped;
  CHECK(summarize({bad}, &dropped).empty());
  CHECK(dropped.size() == 2);
}

TEST_CASE("tradeoff plot") {
  auto sums = summarize({record(0.0, 0, 0.91, 0.31), record(0.0, 1, 0.83, 0.22), record(1.0, 0, 0.12, 0.08),
                         record(1.0, 1, 0.2, 0.12)});
  const std::string svg = plot_tradeoff(sums, "fc small <n=16>");
  CHECK(count(svg, "class=\"box ") == 4);
  CHECK(count(svg, "class=\"box accuracy\"") == 2);
  CHECK(well_formed(svg));
  CHECK(svg.find("&lt;n=16&gt;") != std::string::npos);
  CHECK(svg.find("href") == std::string::npos);
  CHECK(svg.find("inverted") != std::string::npos);
  CHECK(plot_tradeoff(sums, "fc small <n=16>") == svg);

  CHECK(attribute(svg, "data-metric=\"accuracy\"", "data-min") <= 0.12);
  CHECK(attribute(svg, "data-metric=\"accuracy\"", "data-max") >= 0.91);
  CHECK(attribute(svg, "data-metric=\"mse\"", "data-min") <= 0.08);
  CHECK(attribute(svg, "data-metric=\"mse\"", "data-max") >= 0.31);

  CHECK_THROWS_AS(plot_tradeoff({sums[0]}), Error);
  auto mixed = sums;
  mixed[1].key.n = 8;
  CHECK_THROWS_AS(plot_tradeoff(mixed), Error);
}

TEST_CASE("scaling plot") {
  const std::string one = plot_scaling({{"lambda=0", {{4, 0.5, 0.1}, {16, 0.7, 0.05}}}}, "accuracy", false);
  CHECK(well_formed(one));
  auto line = points(one, "line");
  CHECK(line.size() == 2);
  CHECK(line[0].first < line[1].first);

  // band vertices sit at mean +- half-width on the axis mapping
  const double top = attribute(one, "<svg", "data-plot-top"), bottom = attribute(one, "<svg", "data-plot-bottom");
  const double lo = attribute(one, "data-metric", "data-min"), hi = attribute(one, "data-metric", "data-max");
  auto y = [&](double v) { return bottom - (v - lo) / (hi - lo) * (bottom - top); };
  auto band = points(one, "band");
  REQUIRE(band.size() == 4);
  CHECK(band[0].second == doctest::Approx(y(0.6)).epsilon(1e-4));
  CHECK(band[1].second == doctest::Approx(y(0.75)).epsilon(1e-4));
  CHECK(band[2].second == doctest::Approx(y(0.65)).epsilon(1e-4));
  CHECK(band[3].second == doctest::Approx(y(0.4)).epsilon(1e-4));
  CHECK(line[0].second == doctest::Approx(y(0.5)).epsilon(1e-4));

  // the x axis is logarithmic: 4, 16, 64 are evenly spaced
  const std::string three =
      plot_scaling({{"pca", {{4, 0.1, 0}, {16, 0.2, 0}, {64, 0.3, 0}}}}, "mse", true);
  auto xs = points(three, "line");
  CHECK(xs[1].first - xs[0].first == doctest::Approx(xs[2].first - xs[1].first).epsilon(1e-3));

  // a series missing an n leaves the others alone; one point is a marker
  const std::string two = plot_scaling({{"a", {{4, 0.5, 0.1}, {16, 0.7, 0.05}}}, {"b", {{16, 0.6, 0.0}}}},
                                       "accuracy", false);
  CHECK(count(two, "class=\"line\"") == 1);
  CHECK(count(two, "class=\"marker\"") == 1);
  CHECK_THROWS_AS(plot_scaling({{"a", {{4, 0.5, 0.1}}}}, "accuracy", false), Error);

  auto sums = summarize({record(0.0, 0, 0.9, 0.3, 4), record(0.0, 0, 0.8, 0.2, 16), record(1.0, 0, 0.3, 0.1, 4)});
  auto series = lambda_series(sums, true);
  REQUIRE(series.size() == 2);
  CHECK(series[0].points.size() == 2);
  CHECK(series[1].points.size() == 1);
  CHECK(series[0].points[1].mean == 0.2);
}

TEST_CASE("latent export") {
  ModelSpec spec;
  spec.n = 3;
  auto m = build_cre(spec);
  const data::Dataset d = testing::bars(120, 5);

  std::ostringstream out;
  std::vector<std::string> warnings;
  export_latent(*m, d, 5, out, &warnings);
  CHECK(warnings.empty());
  std::istringstream in(out.str());
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "index,class,z0,z1,z2");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  REQUIRE(rows.size() == 50);

  // coordinates are bit-exact with a direct encode of the same samples
  std::vector<std::size_t> idx;
  for (const auto& r : rows) idx.push_back(std::stoul(r.substr(0, r.find(','))));
  CHECK(std::is_sorted(idx.begin(), idx.end()));
  const data::Batch b = data::gather(d, idx);
  Graph g;
  Rng rng(0);
  nn::ForwardContext ctx(g, false, rng);
  const Tensor& z = encode(*m, ctx, ctx.constant(b.images)).z.value();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::istringstream fields(rows[r]);
    std::string f;
    std::getline(fields, f, ',');
    std::getline(fields, f, ',');
    CHECK(std::stoul(f) == b.labels[r]);
    for (std::size_t j = 0; j < 3; ++j) {
      std::getline(fields, f, ',');
      CHECK(std::strtod(f.c_str(), nullptr) == z[r * 3 + j]);
    }
  }

  std::ostringstream empty;
  export_latent(*m, d, 0, empty);
  CHECK(empty.str() == "index,class,z0,z1,z2\n");

  spec.n = 16;
  std::vector<std::string> wide;
  std::ostringstream big;
  export_latent(*build_cre(spec), testing::bars(600, 6), 50, big, &wide);
  CHECK(wide.size() == 1);
  const std::string text = big.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 501);
}

TEST_CASE("reconstruction grid") {
  CHECK(to_byte(-1.0) == 0);
  CHECK(to_byte(1.0) == 255);
  CHECK(to_byte(-3.0) == 0);
  CHECK(to_byte(7.0) == 255);

  const data::Dataset d = testing::bars(3, 9);
  Image img = reconstruction_grid(d.images, d.images, 2);
  CHECK(img.width == 2 * 28 + 2);
  CHECK(img.height == 3 * 28 + 2 * 2);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < 28; ++x) CHECK(img.pixels[y * img.width + x] == img.pixels[y * img.width + x + 30]);

  const std::string pgm = encode_pnm(img);
  CHECK(pgm.rfind("P5\n58 88\n255\n", 0) == 0);
  CHECK(pgm.size() == 13 + 58 * 88);

  Tensor colour({2, 3, 4, 5}, -1.0);
  Image rgb = reconstruction_grid(colour, colour, 1);
  CHECK(rgb.channels == 3);
  CHECK(encode_pnm(rgb).rfind("P6\n11 9\n255\n", 0) == 0);

  CHECK_THROWS_AS(reconstruction_grid(Tensor({65, 1, 2, 2}), Tensor({65, 1, 2, 2})), Error);
  CHECK_THROWS_AS(reconstruction_grid(d.images, colour), ShapeError);

  ModelSpec spec;
  Image model_grid = reconstruction_grid(*build_cre(spec), d.images);
  CHECK(model_grid.width == 58);
  CHECK(model_grid.height == 88);
}
