#pragma once

// Minimal deterministic SVG 1.1 writer for the handful of figure types the
// analysis emits: scatter, histogram, line, quiver and heatmap.
//
// Layout is fixed: 70 px left margin, 20 px right, 40 px top (title),
// 55 px bottom. Ticks land on 1/2/5 x 10^k steps, about five per axis.
// The plot-area group carries its data-to-pixel mapping as data-* attributes
// so emitted coordinates can be mapped back.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "injected/common.hpp"
#include "injected/diffusion.hpp"
#include "injected/driftfield.hpp"
#include "injected/trajmetrics.hpp"

namespace injected::plot {

struct ScatterData {
  std::vector<Point2> points;
  std::vector<int> categories;  // empty, or one per point
  double radius = 2.5;
};

struct LineSeries {
  std::vector<double> x;
  std::vector<double> y;
  int category = 0;
};

struct LineData {
  std::vector<LineSeries> series;
  double stroke_width = 1.5;
  double opacity = 1.0;
};

struct HistogramData {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
};

struct QuiverData {
  std::vector<Point2> origins;
  std::vector<Point2> vectors;
  double scale = 1.0;  // data units per unit of vector length
};

struct HeatmapData {
  Grid2D grid;                // cell centres sit on the grid nodes
  std::vector<double> values;  // grid.size(), row-major as Grid2D
};

using Payload = std::variant<ScatterData, HistogramData, LineData, QuiverData, HeatmapData>;

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 640;
  int height = 480;
  Payload data;
};

inline constexpr double kMarginLeft = 70.0;
inline constexpr double kMarginRight = 20.0;
inline constexpr double kMarginTop = 40.0;
inline constexpr double kMarginBottom = 55.0;

// tab10
inline constexpr std::array<const char*, 10> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                         "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

inline std::string category_color(int c) {
  const int n = static_cast<int>(kPalette.size());
  return kPalette[static_cast<std::size_t>(((c % n) + n) % n)];
}

struct Rgb {
  int r, g, b;
};

// Light-to-dark blue ramp; larger values are darker.
inline Rgb ramp_color(double u) {
  u = std::clamp(u, 0.0, 1.0);
  constexpr Rgb lo{247, 251, 255};
  constexpr Rgb hi{8, 48, 107};
  auto mix = [u](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * u)); };
  return {mix(lo.r, hi.r), mix(lo.g, hi.g), mix(lo.b, hi.b)};
}

inline std::string xml_escape(const std::string& s) {
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

inline std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string tick_label(double v, double step) {
  if (std::abs(v) < step * 1e-9) v = 0.0;
  const int decimals = std::max(0, -static_cast<int>(std::floor(std::log10(step) + 1e-9)));
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline double nice_step(double range, int target = 5) {
  if (!(range > 0.0)) return 1.0;
  const double raw = range / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  const double nice = f < 1.5 ? 1.0 : f < 3.5 ? 2.0 : f < 7.5 ? 5.0 : 10.0;
  return nice * mag;
}

struct Extent {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  // Pads by `frac` of the span; widens degenerate ranges to a unit interval.
  Extent padded(double frac) const {
    Extent e = *this;
    if (!(e.hi > e.lo)) {
      e.lo -= 0.5;
      e.hi += 0.5;
      return e;
    }
    const double pad = (e.hi - e.lo) * frac;
    e.lo -= pad;
    e.hi += pad;
    return e;
  }
};

// Affine map from data space to the SVG pixel plot area (y flipped).
struct Frame {
  Extent x;
  Extent y;
  double left, right, top, bottom;

  double px(double v) const { return left + (v - x.lo) / (x.hi - x.lo) * (right - left); }
  double py(double v) const { return bottom - (v - y.lo) / (y.hi - y.lo) * (bottom - top); }
};

namespace detail {

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw InvalidArgument(std::string("render: non-finite value in ") + what);
}

struct Bounds {
  Extent x;
  Extent y;
};

inline Bounds bounds_of(const ScatterData& d) {
  if (d.points.empty()) throw InvalidArgument("render: empty scatter payload");
  if (!d.categories.empty() && d.categories.size() != d.points.size()) {
    throw InvalidArgument("render: scatter categories do not match point count");
  }
  Bounds b;
  for (const auto& p : d.points) {
    require_finite(p.x, "scatter");
    require_finite(p.y, "scatter");
    b.x.add(p.x);
    b.y.add(p.y);
  }
  return {b.x.padded(0.05), b.y.padded(0.05)};
}

inline Bounds bounds_of(const HistogramData& d) {
  if (d.counts.empty() || d.edges.size() != d.counts.size() + 1) throw InvalidArgument("render: empty histogram payload");
  Bounds b;
  for (double e : d.edges) {
    require_finite(e, "histogram");
    b.x.add(e);
  }
  b.y.add(0.0);
  for (auto c : d.counts) b.y.add(static_cast<double>(c));
  Extent y = b.y;
  y.hi = y.hi > 0.0 ? y.hi * 1.05 : 1.0;
  return {b.x.padded(0.0), y};
}

inline Bounds bounds_of(const LineData& d) {
  Bounds b;
  std::size_t n = 0;
  for (const auto& s : d.series) {
    if (s.x.size() != s.y.size()) throw InvalidArgument("render: line series x/y length mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      require_finite(s.x[i], "line");
      require_finite(s.y[i], "line");
      b.x.add(s.x[i]);
      b.y.add(s.y[i]);
      ++n;
    }
  }
  if (n == 0) throw InvalidArgument("render: empty line payload");
  return {b.x.padded(0.02), b.y.padded(0.05)};
}

inline Bounds bounds_of(const QuiverData& d) {
  if (d.origins.empty() || d.origins.size() != d.vectors.size()) throw InvalidArgument("render: empty quiver payload");
  Bounds b;
  for (std::size_t i = 0; i < d.origins.size(); ++i) {
    const Point2 o = d.origins[i];
    const Point2 tip = o + d.scale * d.vectors[i];
    for (double v : {o.x, o.y, tip.x, tip.y}) require_finite(v, "quiver");
    b.x.add(o.x);
    b.x.add(tip.x);
    b.y.add(o.y);
    b.y.add(tip.y);
  }
  return {b.x.padded(0.05), b.y.padded(0.05)};
}

inline Bounds bounds_of(const HeatmapData& d) {
  if (d.values.empty() || d.values.size() != d.grid.size()) throw InvalidArgument("render: empty heatmap payload");
  d.grid.validate();
  for (double v : d.values) require_finite(v, "heatmap");
  Bounds b;
  b.x.add(d.grid.x_min - d.grid.dx() / 2);
  b.x.add(d.grid.x_max + d.grid.dx() / 2);
  b.y.add(d.grid.y_min - d.grid.dy() / 2);
  b.y.add(d.grid.y_max + d.grid.dy() / 2);
  return b;
}

inline void draw(std::ostringstream& o, const Frame& f, const ScatterData& d) {
  for (std::size_t i = 0; i < d.points.size(); ++i) {
    const int cat = d.categories.empty() ? 0 : d.categories[i];
    o << "<circle cx=\"" << fmt(f.px(d.points[i].x)) << "\" cy=\"" << fmt(f.py(d.points[i].y)) << "\" r=\""
      << fmt(d.radius) << "\" fill=\"" << category_color(cat) << "\" fill-opacity=\"0.8\"/>\n";
  }
}

inline void draw(std::ostringstream& o, const Frame& f, const HistogramData& d) {
  for (std::size_t i = 0; i < d.counts.size(); ++i) {
    const double x0 = f.px(d.edges[i]);
    const double x1 = f.px(d.edges[i + 1]);
    const double y0 = f.py(static_cast<double>(d.counts[i]));
    const double y1 = f.py(0.0);
    o << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y0) << "\" width=\"" << fmt(x1 - x0) << "\" height=\""
      << fmt(y1 - y0) << "\" fill=\"" << kPalette[0] << "\" stroke=\"#ffffff\" stroke-width=\"0.5\"/>\n";
  }
}

inline void draw(std::ostringstream& o, const Frame& f, const LineData& d) {
  for (const auto& s : d.series) {
    if (s.x.empty()) continue;
    o << "<polyline fill=\"none\" stroke=\"" << category_color(s.category) << "\" stroke-width=\""
      << fmt(d.stroke_width) << "\"";
    if (d.opacity < 1.0) o << " stroke-opacity=\"" << fmt(d.opacity) << "\"";
    o << " points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i) o << ' ';
      o << fmt(f.px(s.x[i])) << ',' << fmt(f.py(s.y[i]));
    }
    o << "\"/>\n";
  }
}

inline void draw(std::ostringstream& o, const Frame& f, const QuiverData& d) {
  for (std::size_t i = 0; i < d.origins.size(); ++i) {
    const Point2 a = d.origins[i];
    const Point2 tip = a + d.scale * d.vectors[i];
    const double x1 = f.px(a.x);
    const double y1 = f.py(a.y);
    const double x2 = f.px(tip.x);
    const double y2 = f.py(tip.y);
    o << "<g class=\"arrow\"><line x1=\"" << fmt(x1) << "\" y1=\"" << fmt(y1) << "\" x2=\"" << fmt(x2) << "\" y2=\""
      << fmt(y2) << "\" stroke=\"#333333\" stroke-width=\"1\"/>";
    const double len = std::hypot(x2 - x1, y2 - y1);
    if (len > 1e-9) {
      const double ux = (x2 - x1) / len;
      const double uy = (y2 - y1) / len;
      const double head = std::min(5.0, 0.5 * len);
      const double bx = x2 - ux * head;
      const double by = y2 - uy * head;
      const double wx = -uy * head * 0.5;
      const double wy = ux * head * 0.5;
      o << "<polygon points=\"" << fmt(x2) << ',' << fmt(y2) << ' ' << fmt(bx + wx) << ',' << fmt(by + wy) << ' '
        << fmt(bx - wx) << ',' << fmt(by - wy) << "\" fill=\"#333333\"/>";
    }
    o << "</g>\n";
  }
}

inline void draw(std::ostringstream& o, const Frame& f, const HeatmapData& d) {
  const auto [lo_it, hi_it] = std::minmax_element(d.values.begin(), d.values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  const Grid2D& g = d.grid;
  for (int iy = 0; iy < g.ny; ++iy) {
    for (int ix = 0; ix < g.nx; ++ix) {
      const Point2 c = g.node(ix, iy);
      const double v = d.values[g.index(ix, iy)];
      const Rgb col = ramp_color(hi > lo ? (v - lo) / (hi - lo) : 0.5);
      const double x0 = f.px(c.x - g.dx() / 2);
      const double x1 = f.px(c.x + g.dx() / 2);
      const double y0 = f.py(c.y + g.dy() / 2);
      const double y1 = f.py(c.y - g.dy() / 2);
      o << "<rect class=\"cell\" x=\"" << fmt(x0) << "\" y=\"" << fmt(y0) << "\" width=\"" << fmt(x1 - x0)
        << "\" height=\"" << fmt(y1 - y0) << "\" fill=\"rgb(" << col.r << ',' << col.g << ',' << col.b
        << ")\" data-value=\"" << format_real(v) << "\"/>\n";
    }
  }
}

inline void axes(std::ostringstream& o, const Frame& f) {
  o << "<g class=\"axes\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#000000\">\n";
  o << "<rect x=\"" << fmt(f.left) << "\" y=\"" << fmt(f.top) << "\" width=\"" << fmt(f.right - f.left)
    << "\" height=\"" << fmt(f.bottom - f.top) << "\" fill=\"none\" stroke=\"#000000\"/>\n";
  const double xs = nice_step(f.x.hi - f.x.lo);
  for (double v = std::ceil(f.x.lo / xs - 1e-9) * xs; v <= f.x.hi + xs * 1e-9; v += xs) {
    const double p = f.px(v);
    o << "<line x1=\"" << fmt(p) << "\" y1=\"" << fmt(f.bottom) << "\" x2=\"" << fmt(p) << "\" y2=\""
      << fmt(f.bottom + 5) << "\" stroke=\"#000000\"/>";
    o << "<text x=\"" << fmt(p) << "\" y=\"" << fmt(f.bottom + 18) << "\" text-anchor=\"middle\">"
      << tick_label(v, xs) << "</text>\n";
  }
  const double ys = nice_step(f.y.hi - f.y.lo);
  for (double v = std::ceil(f.y.lo / ys - 1e-9) * ys; v <= f.y.hi + ys * 1e-9; v += ys) {
    const double p = f.py(v);
    o << "<line x1=\"" << fmt(f.left - 5) << "\" y1=\"" << fmt(p) << "\" x2=\"" << fmt(f.left) << "\" y2=\""
      << fmt(p) << "\" stroke=\"#000000\"/>";
    o << "<text x=\"" << fmt(f.left - 8) << "\" y=\"" << fmt(p + 4) << "\" text-anchor=\"end\">" << tick_label(v, ys)
      << "</text>\n";
  }
  o << "</g>\n";
}

}  // namespace detail

inline std::string render(const PlotSpec& spec) {
  if (spec.width <= 0 || spec.height <= 0) throw InvalidArgument("render: width and height must be positive");
  const auto b = std::visit([](const auto& d) { return detail::bounds_of(d); }, spec.data);
  Frame f{b.x, b.y, kMarginLeft, spec.width - kMarginRight, kMarginTop, spec.height - kMarginBottom};
  if (f.right <= f.left || f.bottom <= f.top) throw InvalidArgument("render: canvas too small for margins");

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << spec.width << "\" height=\""
    << spec.height << "\" viewBox=\"0 0 " << spec.width << ' ' << spec.height << "\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << spec.width << "\" height=\"" << spec.height << "\" fill=\"#ffffff\"/>\n";
  o << "<text x=\"" << fmt(spec.width / 2.0) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"14\">" << xml_escape(spec.title) << "</text>\n";
  o << "<g class=\"plot-area\" data-x-lo=\"" << format_real(f.x.lo) << "\" data-x-hi=\"" << format_real(f.x.hi)
    << "\" data-y-lo=\"" << format_real(f.y.lo) << "\" data-y-hi=\"" << format_real(f.y.hi) << "\" data-left=\""
    << format_real(f.left) << "\" data-right=\"" << format_real(f.right) << "\" data-top=\"" << format_real(f.top)
    << "\" data-bottom=\"" << format_real(f.bottom) << "\">\n";
  std::visit([&](const auto& d) { detail::draw(o, f, d); }, spec.data);
  o << "</g>\n";
  detail::axes(o, f);
  o << "<text x=\"" << fmt((f.left + f.right) / 2) << "\" y=\"" << fmt(spec.height - 12.0)
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(spec.x_label)
    << "</text>\n";
  o << "<text x=\"16\" y=\"" << fmt((f.top + f.bottom) / 2) << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"12\" transform=\"rotate(-90 16 " << fmt((f.top + f.bottom) / 2) << ")\">"
    << xml_escape(spec.y_label) << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Figure set for one (dataset, configuration) run.

struct FigureInputs {
  std::string dataset;
  std::string config;
  std::vector<Point2> original;  // normalized data, optional
  TrajectoryBundle bundle;
  DisplacementResult displacement;
  VelocityCurve velocity;
  ClusterAssignment clusters;
  AlignmentCurve alignment;
  std::vector<DriftField> forward_fields;
  std::vector<DriftField> backward_fields;
  LossCurve losses;
  std::vector<int> snapshot_steps = {10, 20, 30, 40, 50};
  int max_overlay_trajectories = 200;
};

struct Figure {
  std::string path;  // <dataset>/<config>/<name>.svg
  std::string svg;
};

inline std::vector<Figure> figure_bundle(const FigureInputs& in) {
  std::vector<std::string> missing;
  if (in.bundle.empty()) missing.push_back("trajectories");
  if (in.displacement.per_sample.empty()) missing.push_back("displacement");
  if (in.velocity.per_step.empty()) missing.push_back("velocity");
  if (in.clusters.labels.empty()) missing.push_back("clusters");
  if (in.alignment.t.empty()) missing.push_back("alignment");
  if (in.forward_fields.empty()) missing.push_back("forward drift fields");
  if (in.backward_fields.empty()) missing.push_back("backward drift fields");
  if (in.losses.mse_per_timestep.empty()) missing.push_back("noise prediction error");
  if (!missing.empty()) {
    std::string msg = "figure_bundle: missing inputs:";
    for (const auto& m : missing) msg += " " + m + (&m == &missing.back() ? "" : ",");
    throw InvalidArgument(msg);
  }
  if (in.clusters.labels.size() != static_cast<std::size_t>(in.bundle.samples)) {
    throw InvalidArgument("figure_bundle: cluster labels do not match the trajectory sample count");
  }

  const std::string dir = in.dataset + "/" + in.config + "/";
  const std::string tag = in.dataset + ", " + in.config;
  std::vector<Figure> out;
  auto emit = [&](const std::string& name, PlotSpec spec) { out.push_back({dir + name + ".svg", render(spec)}); };

  for (const auto& f : in.forward_fields) {
    emit("heatmap_forward_t" + std::to_string(f.t),
         {"Forward drift magnitude, t=" + std::to_string(f.t) + " (" + tag + ")", "x", "y", 560, 520,
          HeatmapData{f.grid, f.magnitudes}});
  }
  for (const auto& f : in.backward_fields) {
    emit("heatmap_backward_t" + std::to_string(f.t),
         {"Backward drift magnitude, t=" + std::to_string(f.t) + " (" + tag + ")", "x", "y", 560, 520,
          HeatmapData{f.grid, f.magnitudes}});
    QuiverData q;
    double longest = 0.0;
    for (std::size_t i = 0; i < f.grid.size(); ++i) {
      q.origins.push_back(f.grid.node(i));
      q.vectors.push_back(f.vectors[i]);
      longest = std::max(longest, f.magnitudes[i]);
    }
    q.scale = longest > 0.0 ? 0.9 * std::min(f.grid.dx(), f.grid.dy()) / longest : 1.0;
    emit("quiver_backward_t" + std::to_string(f.t),
         {"Backward drift, t=" + std::to_string(f.t) + " (" + tag + ")", "x", "y", 560, 520, std::move(q)});
  }

  {
    LineData l;
    LineSeries s;
    for (std::size_t i = 0; i < in.alignment.t.size(); ++i) {
      if (!in.alignment.cs[i]) continue;
      s.x.push_back(in.alignment.t[i]);
      s.y.push_back(*in.alignment.cs[i]);
    }
    if (s.x.empty()) throw InvalidArgument("figure_bundle: alignment curve has no defined values");
    l.series.push_back(std::move(s));
    emit("alignment", {"Drift alignment CS(t) (" + tag + ")", "timestep t", "mean cosine similarity", 640, 420,
                       std::move(l)});
  }

  emit("displacement_hist", {"Trajectory displacement (" + tag + ")", "total path length", "samples", 640, 420,
                             HistogramData{in.displacement.histogram.edges, in.displacement.histogram.counts}});

  {
    ScatterData s;
    s.points = in.bundle.final_states();
    s.categories = in.clusters.labels;
    emit("clusters_final", {"Trajectory clusters on generated points (K=" + std::to_string(in.clusters.k) + ", " +
                                tag + ")",
                            "x", "y", 560, 520, std::move(s)});
  }

  {
    LineData l;
    l.stroke_width = 0.6;
    l.opacity = 0.5;
    const int n = std::min(in.bundle.samples, in.max_overlay_trajectories);
    for (int i = 0; i < n; ++i) {
      LineSeries s;
      s.category = in.clusters.labels[static_cast<std::size_t>(i)];
      for (int k = 0; k < in.bundle.steps; ++k) {
        s.x.push_back(in.bundle.at(i, k).x);
        s.y.push_back(in.bundle.at(i, k).y);
      }
      l.series.push_back(std::move(s));
    }
    emit("trajectories_clustered", {"Trajectories by cluster (" + tag + ")", "x", "y", 560, 520, std::move(l)});
  }

  {
    LineData l;
    LineSeries s;
    for (std::size_t k = 0; k < in.velocity.per_step.size(); ++k) {
      s.x.push_back(static_cast<double>(k));
      s.y.push_back(in.velocity.per_step[k]);
    }
    l.series.push_back(std::move(s));
    emit("velocity", {"Trajectory velocity V (" + tag + ")", "reverse step", "mean displacement per step", 640, 420,
                      std::move(l)});
  }

  {
    LineData l;
    LineSeries s;
    for (std::size_t k = 0; k < in.losses.mse_per_timestep.size(); ++k) {
      s.x.push_back(static_cast<double>(k + 1));
      s.y.push_back(in.losses.mse_per_timestep[k]);
    }
    l.series.push_back(std::move(s));
    emit("mse_per_timestep", {"Noise prediction error (" + tag + ")", "timestep t", "MSE", 640, 420, std::move(l)});
  }

  if (!in.losses.epoch_loss.empty()) {
    LineData l;
    LineSeries s;
    for (std::size_t k = 0; k < in.losses.epoch_loss.size(); ++k) {
      s.x.push_back(static_cast<double>(k + 1));
      s.y.push_back(in.losses.epoch_loss[k]);
    }
    l.series.push_back(std::move(s));
    emit("loss_epoch", {"Training loss (" + tag + ")", "epoch", "mean MSE", 640, 420, std::move(l)});
  }

  if (!in.original.empty()) {
    ScatterData s;
    s.points = in.original;
    s.categories.assign(in.original.size(), 0);
    for (const auto& p : in.bundle.final_states()) {
      s.points.push_back(p);
      s.categories.push_back(1);
    }
    emit("original_vs_generated", {"Original (blue) vs generated (orange) (" + tag + ")", "x", "y", 560, 520,
                                   std::move(s)});
  }

  for (int tau : in.snapshot_steps) {
    if (tau < 0 || tau >= in.bundle.steps) continue;
    ScatterData s;
    s.points = in.bundle.state(tau);
    s.radius = 2.0;
    emit("snapshot_tau" + std::to_string(tau),
         {"Formation after " + std::to_string(tau) + " reverse steps (" + tag + ")", "x", "y", 560, 520,
          std::move(s)});
  }
  return out;
}

}  // namespace injected::plot
