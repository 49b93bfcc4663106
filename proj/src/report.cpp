#include "cre/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace cre::report {

namespace {

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

double quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct Range {
  double lo = 0.0, hi = 1.0;

  // Pads by 5% of the span, or by 0.05 when the span is zero.
  static Range around(double lo, double hi) {
    const double pad = hi > lo ? 0.05 * (hi - lo) : 0.05 * std::max(1.0, std::abs(lo));
    return {lo - pad, hi + pad};
  }
};

// Plot area shared by both charts.
constexpr double kTop = 50.0, kLeft = 80.0, kHeight = 300.0;

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

class Svg {
 public:
  Svg(double width, double height) : width_(width), height_(height) {}

  std::ostringstream& body() { return body_; }

  std::string finish(const std::string& root_attributes) const {
    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(width_, 0) << "\" height=\"" << fixed(height_, 0)
      << "\" viewBox=\"0 0 " << fixed(width_, 0) << ' ' << fixed(height_, 0) << "\" font-family=\"sans-serif\" "
      << "font-size=\"11\"" << root_attributes << ">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << fixed(width_, 0) << "\" height=\"" << fixed(height_, 0)
      << "\" fill=\"white\"/>\n"
      << body_.str() << "</svg>\n";
    return o.str();
  }

  void text(double x, double y, const std::string& s, const char* anchor = "middle", const char* extra = "") {
    body_ << "<text x=\"" << fixed(x) << "\" y=\"" << fixed(y) << "\" text-anchor=\"" << anchor << "\"" << extra << ">"
          << escape(s) << "</text>\n";
  }

  void line(double x1, double y1, double x2, double y2, const char* cls, const std::string& stroke) {
    body_ << "<line class=\"" << cls << "\" x1=\"" << fixed(x1) << "\" y1=\"" << fixed(y1) << "\" x2=\"" << fixed(x2)
          << "\" y2=\"" << fixed(y2) << "\" stroke=\"" << stroke << "\"/>\n";
  }

  // Vertical axis with 5 ticks; `inverted` puts `range.lo` at the top.
  void axis(double x, const Range& r, bool inverted, const std::string& metric, const std::string& label, bool right) {
    body_ << "<g class=\"axis\" data-metric=\"" << escape(metric) << "\" data-min=\"" << exact(r.lo)
          << "\" data-max=\"" << exact(r.hi) << "\" data-inverted=\"" << (inverted ? "true" : "false") << "\">\n";
    line(x, kTop, x, kTop + kHeight, "axis-line", "black");
    for (int t = 0; t <= 4; ++t) {
      const double v = r.lo + (r.hi - r.lo) * t / 4.0;
      const double y = inverted ? kTop + kHeight * t / 4.0 : kTop + kHeight - kHeight * t / 4.0;
      line(x, y, right ? x + 4 : x - 4, y, "tick", "black");
      text(right ? x + 6 : x - 6, y + 4, fixed(v, 3), right ? "start" : "end");
    }
    const double lx = right ? x + 55 : x - 55, ly = kTop + kHeight / 2;
    body_ << "<text x=\"" << fixed(lx) << "\" y=\"" << fixed(ly) << "\" text-anchor=\"middle\" transform=\"rotate(-90 "
          << fixed(lx) << ' ' << fixed(ly) << ")\">" << escape(label) << "</text>\n";
    body_ << "</g>\n";
  }

 private:
  double width_, height_;
  std::ostringstream body_;
};

double to_y(double v, const Range& r, bool inverted) {
  const double t = (v - r.lo) / (r.hi - r.lo);
  return inverted ? kTop + t * kHeight : kTop + kHeight - t * kHeight;
}

void box(Svg& svg, double cx, double w, const Stats& s, const Range& r, bool inverted, const char* cls,
         const std::string& color) {
  auto y = [&](double v) { return to_y(v, r, inverted); };
  const double top = std::min(y(s.q1), y(s.q3)), bottom = std::max(y(s.q1), y(s.q3));
  svg.line(cx, y(s.whisker_low), cx, y(s.whisker_high), "whisker", color);
  svg.line(cx - w / 4, y(s.whisker_low), cx + w / 4, y(s.whisker_low), "whisker", color);
  svg.line(cx - w / 4, y(s.whisker_high), cx + w / 4, y(s.whisker_high), "whisker", color);
  svg.body() << "<rect class=\"box " << cls << "\" x=\"" << fixed(cx - w / 2) << "\" y=\"" << fixed(top)
             << "\" width=\"" << fixed(w) << "\" height=\"" << fixed(std::max(bottom - top, 0.5))
             << "\" fill=\"" << color << "\" fill-opacity=\"0.35\" stroke=\"" << color << "\"/>\n";
  svg.line(cx - w / 2, y(s.median), cx + w / 2, y(s.median), "median", color);
  for (double o : s.outliers) {
    svg.body() << "<circle class=\"outlier\" cx=\"" << fixed(cx) << "\" cy=\"" << fixed(y(o))
               << "\" r=\"2\" fill=\"none\" stroke=\"" << color << "\"/>\n";
  }
}

}  // namespace

Stats describe(std::vector<double> sample) {
  Stats s;
  s.count = sample.size();
  if (sample.empty()) return s;
  std::sort(sample.begin(), sample.end());
  s.min = sample.front();
  s.max = sample.back();
  s.q1 = quantile(sample, 0.25);
  s.median = quantile(sample, 0.5);
  s.q3 = quantile(sample, 0.75);
  s.mean = std::accumulate(sample.begin(), sample.end(), 0.0) / static_cast<double>(s.count);
  if (s.count > 1) {
    double ss = 0.0;
    for (double v : sample) ss += (v - s.mean) * (v - s.mean);
    const double sd = std::sqrt(ss / static_cast<double>(s.count - 1));
    s.half_width = 1.96 * sd / std::sqrt(static_cast<double>(s.count));
  }
  const double iqr = s.q3 - s.q1, lo = s.q1 - 1.5 * iqr, hi = s.q3 + 1.5 * iqr;
  s.whisker_low = s.max;
  s.whisker_high = s.min;
  for (double v : sample) {
    if (v < lo || v > hi) {
      s.outliers.push_back(v);
    } else {
      s.whisker_low = std::min(s.whisker_low, v);
      s.whisker_high = std::max(s.whisker_high, v);
    }
  }
  return s;
}

std::vector<SweepSummary> summarize(const std::vector<harness::RunRecord>& records, std::vector<std::string>* warnings) {
  std::map<GroupKey, std::vector<harness::MetricPair>> groups;
  for (const auto& r : records) {
    const auto& c = r.config;
    GroupKey k{c.family, c.size, c.n, c.dataset, c.masking_mode, c.lambda};
    auto& g = groups[k];
    if (r.failed || r.epochs.empty()) {
      if (warnings) warnings->push_back("skipping run " + r.run_id + (r.failed ? " (failed)" : " (no epochs)"));
      continue;
    }
    g.push_back(r.best());
  }
  std::vector<SweepSummary> out;
  for (auto& [key, sample] : groups) {
    if (sample.empty()) {
      if (warnings) {
        warnings->push_back("dropping group " + std::string(to_string(key.family)) + "/" +
                            std::string(to_string(key.size)) + " n=" + std::to_string(key.n) +
                            " lambda=" + harness::format_double(key.lambda) + ": no successful runs");
      }
      continue;
    }
    // canonical sample order keeps the summary independent of record order
    std::sort(sample.begin(), sample.end(), [](const auto& a, const auto& b) {
      return a.accuracy != b.accuracy ? a.accuracy < b.accuracy : a.mse < b.mse;
    });
    std::vector<double> acc, mse;
    for (const auto& p : sample) {
      acc.push_back(p.accuracy);
      mse.push_back(p.mse);
    }
    out.push_back({key, sample, describe(acc), describe(mse)});
  }
  return out;
}

std::string plot_tradeoff(const std::vector<SweepSummary>& summaries, const std::string& title) {
  std::set<double> lambdas;
  for (const auto& s : summaries) {
    GroupKey a = s.key, b = summaries.front().key;
    a.lambda = b.lambda = 0.0;
    if (a != b) throw Error("plot_tradeoff: summaries mix configurations; filter to one before plotting");
    if (!lambdas.insert(s.key.lambda).second) throw Error("plot_tradeoff: duplicate lambda group");
  }
  if (lambdas.size() < 2) throw Error("plot_tradeoff: need at least two lambda groups");
  std::vector<const SweepSummary*> ordered;
  for (const auto& s : summaries) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->key.lambda < b->key.lambda; });

  double alo = 1e300, ahi = -1e300, mlo = 1e300, mhi = -1e300;
  for (auto* s : ordered) {
    alo = std::min(alo, s->accuracy.min);
    ahi = std::max(ahi, s->accuracy.max);
    mlo = std::min(mlo, s->mse.min);
    mhi = std::max(mhi, s->mse.max);
  }
  const Range ar = Range::around(alo, ahi), mr = Range::around(mlo, mhi);
  const double slot = 64.0, plot_w = slot * static_cast<double>(ordered.size());
  const double width = kLeft + plot_w + 90.0, height = kTop + kHeight + 90.0;
  Svg svg(width, height);
  const std::string acc_color = "#1f77b4", mse_color = "#ff7f0e";
  if (!title.empty()) svg.text(width / 2, 24, title);
  svg.axis(kLeft, ar, false, "accuracy", "test accuracy (best epoch)", false);
  svg.axis(kLeft + plot_w, mr, true, "mse", "test MSE (best epoch), inverted", true);
  svg.line(kLeft, kTop + kHeight, kLeft + plot_w, kTop + kHeight, "x-axis", "black");
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const double cx = kLeft + slot * (static_cast<double>(i) + 0.5);
    const auto* s = ordered[i];
    svg.body() << "<g class=\"group\" data-lambda=\"" << exact(s->key.lambda) << "\" data-runs=\""
               << s->sample.size() << "\">\n";
    box(svg, cx - 13, 20, s->accuracy, ar, false, "accuracy", acc_color);
    box(svg, cx + 13, 20, s->mse, mr, true, "mse", mse_color);
    svg.body() << "</g>\n";
    svg.text(cx, kTop + kHeight + 16, harness::format_double(s->key.lambda));
  }
  svg.text(kLeft + plot_w / 2, kTop + kHeight + 36, "lambda");
  const double ly = kTop + kHeight + 58;
  svg.body() << "<g class=\"legend\">\n";
  svg.body() << "<rect x=\"" << fixed(kLeft) << "\" y=\"" << fixed(ly - 9) << "\" width=\"10\" height=\"10\" fill=\""
             << acc_color << "\"/>\n";
  svg.text(kLeft + 14, ly, "accuracy (left axis)", "start");
  svg.body() << "<rect x=\"" << fixed(kLeft) << "\" y=\"" << fixed(ly + 7) << "\" width=\"10\" height=\"10\" fill=\""
             << mse_color << "\"/>\n";
  svg.text(kLeft + 14, ly + 16, "MSE (right axis, inverted: up is better); whiskers at 1.5 IQR", "start");
  svg.body() << "</g>\n";
  return svg.finish(" data-plot-top=\"" + fixed(kTop) + "\" data-plot-bottom=\"" + fixed(kTop + kHeight) + "\"");
}

std::string plot_scaling(const std::vector<Series>& series, const std::string& metric, bool lower_is_better) {
  std::set<std::size_t> ns;
  double lo = 1e300, hi = -1e300;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      if (p.n == 0) throw Error("plot_scaling: n must be positive");
      ns.insert(p.n);
      lo = std::min(lo, p.mean - p.half_width);
      hi = std::max(hi, p.mean + p.half_width);
    }
  }
  if (ns.size() < 2) throw Error("plot_scaling: need at least two distinct n");
  const Range yr = Range::around(lo, hi);
  const double xlo = std::log10(static_cast<double>(*ns.begin())), xhi = std::log10(static_cast<double>(*ns.rbegin()));
  const double plot_w = 420.0, width = kLeft + plot_w + 170.0, height = kTop + kHeight + 70.0;
  auto x_of = [&](std::size_t n) { return kLeft + (std::log10(static_cast<double>(n)) - xlo) / (xhi - xlo) * plot_w; };
  auto y_of = [&](double v) { return to_y(v, yr, false); };

  Svg svg(width, height);
  svg.axis(kLeft, yr, false, metric, metric + (lower_is_better ? " (lower is better)" : " (higher is better)"), false);
  svg.line(kLeft, kTop + kHeight, kLeft + plot_w, kTop + kHeight, "x-axis", "black");
  svg.body() << "<g class=\"x-ticks\" data-scale=\"log10\">\n";
  for (std::size_t n : ns) {
    svg.line(x_of(n), kTop + kHeight, x_of(n), kTop + kHeight + 4, "tick", "black");
    svg.text(x_of(n), kTop + kHeight + 16, std::to_string(n));
  }
  svg.body() << "</g>\n";
  svg.text(kLeft + plot_w / 2, kTop + kHeight + 36, "latent dimension n (log scale)");

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const std::string color = kPalette[i % std::size(kPalette)];
    auto pts = s.points;
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.n < b.n; });
    svg.body() << "<g class=\"series\" data-series=\"" << escape(s.label) << "\">\n";
    if (pts.size() == 1) {
      svg.body() << "<circle class=\"marker\" cx=\"" << fixed(x_of(pts[0].n)) << "\" cy=\"" << fixed(y_of(pts[0].mean))
                 << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    } else if (pts.size() > 1) {
      svg.body() << "<polygon class=\"band\" points=\"";
      for (std::size_t k = 0; k < pts.size(); ++k) {
        svg.body() << (k ? " " : "") << fixed(x_of(pts[k].n)) << ',' << fixed(y_of(pts[k].mean + pts[k].half_width));
      }
      for (std::size_t k = pts.size(); k-- > 0;) {
        svg.body() << ' ' << fixed(x_of(pts[k].n)) << ',' << fixed(y_of(pts[k].mean - pts[k].half_width));
      }
      svg.body() << "\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
      svg.body() << "<polyline class=\"line\" points=\"";
      for (std::size_t k = 0; k < pts.size(); ++k) {
        svg.body() << (k ? " " : "") << fixed(x_of(pts[k].n)) << ',' << fixed(y_of(pts[k].mean));
      }
      svg.body() << "\" fill=\"none\" stroke=\"" << color << "\"/>\n";
    }
    const double ly = kTop + 14.0 * static_cast<double>(i);
    svg.body() << "<rect x=\"" << fixed(kLeft + plot_w + 20) << "\" y=\"" << fixed(ly - 9)
               << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
    svg.text(kLeft + plot_w + 34, ly, s.label, "start");
    svg.body() << "</g>\n";
  }
  return svg.finish(" data-plot-top=\"" + fixed(kTop) + "\" data-plot-bottom=\"" + fixed(kTop + kHeight) + "\"");
}

std::vector<Series> lambda_series(const std::vector<SweepSummary>& summaries, bool use_mse) {
  std::map<double, Series> by_lambda;
  for (const auto& s : summaries) {
    auto& series = by_lambda[s.key.lambda];
    series.label = "lambda=" + harness::format_double(s.key.lambda);
    const Stats& st = use_mse ? s.mse : s.accuracy;
    series.points.push_back({s.key.n, st.mean, st.half_width});
  }
  std::vector<Series> out;
  for (auto& [l, s] : by_lambda) out.push_back(std::move(s));
  return out;
}

void export_latent(const CreModel& m, const data::Dataset& d, std::size_t per_class, std::ostream& out,
                   std::vector<std::string>* warnings) {
  const std::size_t width = m.latent_size();
  if (width > 3 && warnings) {
    warnings->push_back("latent has " + std::to_string(width) + " coordinates; more than 3 cannot be viewed directly");
  }
  out << "index,class";
  for (std::size_t j = 0; j < width; ++j) out << ",z" << j;
  out << '\n';
  std::map<std::size_t, std::size_t> taken;
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < d.size() && per_class > 0; ++i) {
    if (taken[d.labels[i]] < per_class) {
      ++taken[d.labels[i]];
      chosen.push_back(i);
    }
  }
  if (chosen.empty()) return;
  const data::Batch b = data::gather(d, chosen);
  Graph g;
  Rng rng(0);
  nn::ForwardContext ctx(g, false, rng);
  ctx.set_track_grads(false);
  const Tensor& z = encode(m, ctx, ctx.constant(b.images)).z.value();
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    out << chosen[r] << ',' << b.labels[r];
    for (std::size_t j = 0; j < width; ++j) out << ',' << exact(z[r * width + j]);
    out << '\n';
  }
}

std::uint8_t to_byte(double v) {
  const double x = std::clamp((v + 1.0) * 127.5, 0.0, 255.0);
  return static_cast<std::uint8_t>(std::lround(x));
}

Image reconstruction_grid(const Tensor& inputs, const Tensor& recon, std::size_t gutter) {
  if (inputs.rank() != 4 || inputs.shape != recon.shape) {
    throw ShapeError("reconstruction_grid: inputs " + to_string(inputs.shape) + " and reconstructions " +
                     to_string(recon.shape) + " must match as [N, C, H, W]");
  }
  const std::size_t N = inputs.dim(0), C = inputs.dim(1), H = inputs.dim(2), W = inputs.dim(3);
  if (N > 64) throw Error("reconstruction_grid: at most 64 images");
  if (C != 1 && C != 3) throw ShapeError("reconstruction_grid: 1 or 3 channels required");
  Image img;
  img.channels = C;
  img.width = 2 * W + gutter;
  img.height = N * H + (N ? (N - 1) * gutter : 0);
  img.pixels.assign(img.width * img.height * C, 128);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t col = 0; col < 2; ++col) {
      const Tensor& src = col ? recon : inputs;
      for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c)
          for (std::size_t ch = 0; ch < C; ++ch) {
            const std::size_t y = n * (H + gutter) + r, x = col * (W + gutter) + c;
            img.pixels[(y * img.width + x) * C + ch] = to_byte(src[((n * C + ch) * H + r) * W + c]);
          }
    }
  return img;
}

Image reconstruction_grid(const CreModel& m, const Tensor& images, std::size_t gutter) {
  Graph g;
  Rng rng(0);
  nn::ForwardContext ctx(g, false, rng);
  ctx.set_track_grads(false);
  const Var x = ctx.constant(images);
  const Tensor& rec = decode(m, ctx, encode(m, ctx, x)).value();
  return reconstruction_grid(images, rec, gutter);
}

std::string encode_pnm(const Image& image) {
  std::string out = (image.channels == 1 ? "P5\n" : "P6\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.append(image.pixels.begin(), image.pixels.end());
  return out;
}

void write_pnm(const std::string& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << encode_pnm(image);
}

}  // namespace cre::report
