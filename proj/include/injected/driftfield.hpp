#pragma once

// Drift fields on regular grids: the forward posterior mean (a kernel
// weighted mixture over the data) and the learned reverse mean, plus the
// cosine alignment of the learned drift with each sample's remaining path.

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "injected/common.hpp"
#include "injected/dataset.hpp"
#include "injected/diffusion.hpp"
#include "injected/model.hpp"

namespace injected {

struct Grid2D {
  double x_min = -1.0;
  double x_max = 1.0;
  double y_min = -1.0;
  double y_max = 1.0;
  int nx = 20;
  int ny = 20;

  std::size_t size() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
  double dx() const { return (x_max - x_min) / (nx - 1); }
  double dy() const { return (y_max - y_min) / (ny - 1); }
  // Row-major: y index outer, x index inner.
  std::size_t index(int ix, int iy) const {
    return static_cast<std::size_t>(iy) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(ix);
  }
  Point2 node(int ix, int iy) const {
    return {ix == nx - 1 ? x_max : x_min + ix * dx(), iy == ny - 1 ? y_max : y_min + iy * dy()};
  }
  Point2 node(std::size_t i) const {
    return node(static_cast<int>(i % static_cast<std::size_t>(nx)), static_cast<int>(i / static_cast<std::size_t>(nx)));
  }

  void validate() const {
    if (nx < 2 || ny < 2) throw InvalidArgument("grid: need at least 2 nodes per axis");
    if (!(x_min < x_max) || !(y_min < y_max)) throw InvalidArgument("grid: bounds must be ordered");
  }

  // Bounding box of `pts` grown by `pad` on every side.
  static Grid2D around(const std::vector<Point2>& pts, double pad = 0.5, int nx = 20, int ny = 20) {
    if (pts.empty()) throw InvalidArgument("grid: no points");
    Grid2D g;
    g.nx = nx;
    g.ny = ny;
    g.x_min = g.x_max = pts.front().x;
    g.y_min = g.y_max = pts.front().y;
    for (const auto& p : pts) {
      g.x_min = std::min(g.x_min, p.x);
      g.x_max = std::max(g.x_max, p.x);
      g.y_min = std::min(g.y_min, p.y);
      g.y_max = std::max(g.y_max, p.y);
    }
    g.x_min -= pad;
    g.x_max += pad;
    g.y_min -= pad;
    g.y_max += pad;
    g.validate();
    return g;
  }
};

enum class DriftKind { forward, backward };

struct DriftField {
  Grid2D grid;
  int t = 1;
  DriftKind kind = DriftKind::forward;
  std::vector<Point2> vectors;  // mu - x_t per node
  std::vector<double> magnitudes;

  double mean_magnitude() const {
    if (magnitudes.empty()) return 0.0;
    double s = 0.0;
    for (double m : magnitudes) s += m;
    return s / static_cast<double>(magnitudes.size());
  }
};

inline void check_timestep(int t, const NoiseSchedule& s, const char* who) {
  if (t < 1 || t > s.T) {
    throw InvalidArgument(std::string(who) + ": t=" + std::to_string(t) + " outside [1, " + std::to_string(s.T) + "]");
  }
}

// Normalized likelihood weights of every data point given x_t:
// w_j proportional to exp(-|x_t - sqrt(abar_t) x0_j|^2 / (2 (1 - abar_t))).
inline std::vector<double> posterior_weights(Point2 x_t, int t, const std::vector<Point2>& data,
                                             const NoiseSchedule& s) {
  const double abar = s.bar(t);
  const double var = 1.0 - abar;
  if (!(var > 0.0)) throw InvalidArgument("forward drift undefined: 1 - alpha_bar_t is zero");
  const double scale = std::sqrt(abar);
  std::vector<double> w(data.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < data.size(); ++j) {
    const Point2 d = x_t - scale * data[j];
    w[j] = -dot(d, d) / (2.0 * var);
    top = std::max(top, w[j]);
  }
  double total = 0.0;
  for (auto& v : w) {
    v = std::exp(v - top);
    total += v;
  }
  for (auto& v : w) v /= total;
  return w;
}

// Posterior mean of x_{t-1} given x_t and x_0.
inline Point2 posterior_mean(Point2 x_t, Point2 x0, int t, const NoiseSchedule& s) {
  const double a = s.step_alpha(t);
  const double abar_prev = s.bar(t - 1);
  const double denom = 1.0 - s.bar(t);
  return (1.0 / denom) * (std::sqrt(a) * (1.0 - abar_prev) * x_t + std::sqrt(abar_prev) * (1.0 - a) * x0);
}

inline DriftField forward_drift(const Grid2D& grid, int t, const PointCloud& data, const NoiseSchedule& s) {
  grid.validate();
  check_timestep(t, s, "forward_drift");
  if (data.empty()) throw InvalidArgument("forward_drift: empty data");
  DriftField f;
  f.grid = grid;
  f.t = t;
  f.kind = DriftKind::forward;
  f.vectors.resize(grid.size());
  f.magnitudes.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Point2 x = grid.node(i);
    const auto w = posterior_weights(x, t, data.points, s);
    Point2 mu{0.0, 0.0};
    for (std::size_t j = 0; j < data.size(); ++j) mu = mu + w[j] * posterior_mean(x, data.points[j], t, s);
    f.vectors[i] = mu - x;
    f.magnitudes[i] = norm(f.vectors[i]);
  }
  return f;
}

// Learned reverse mean at arbitrary points, minus the points.
inline std::vector<Point2> backward_drift_at(const std::vector<Point2>& pts, int t, const DenoiserModel& model,
                                             const NoiseSchedule& s) {
  check_timestep(t, s, "backward_drift");
  const Batch2 x = to_batch(pts);
  const Batch2 eps = predict_noise(model, x, t, s.T);
  const Batch2 mu = (1.0 / std::sqrt(s.step_alpha(t))) * (x - s.eps_coefficient(t) * eps);
  std::vector<Point2> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out[i] = {mu(r, 0) - x(r, 0), mu(r, 1) - x(r, 1)};
  }
  return out;
}

inline DriftField backward_drift(const Grid2D& grid, int t, const DenoiserModel& model, const NoiseSchedule& s) {
  grid.validate();
  std::vector<Point2> nodes(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) nodes[i] = grid.node(i);
  DriftField f;
  f.grid = grid;
  f.t = t;
  f.kind = DriftKind::backward;
  f.vectors = backward_drift_at(nodes, t, model, s);
  f.magnitudes.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) f.magnitudes[i] = norm(f.vectors[i]);
  return f;
}

// Bilinear interpolation of the field's vectors. Points outside the grid are
// clamped onto its boundary.
inline Point2 interpolate_field(const DriftField& f, Point2 p) {
  const Grid2D& g = f.grid;
  if (f.vectors.size() != g.size()) throw InvalidArgument("interpolate_field: field/grid size mismatch");
  const double px = std::clamp(p.x, g.x_min, g.x_max);
  const double py = std::clamp(p.y, g.y_min, g.y_max);
  const double ux = (px - g.x_min) / g.dx();
  const double uy = (py - g.y_min) / g.dy();
  const int ix = std::clamp(static_cast<int>(std::floor(ux)), 0, g.nx - 2);
  const int iy = std::clamp(static_cast<int>(std::floor(uy)), 0, g.ny - 2);
  const double fx = ux - ix;
  const double fy = uy - iy;
  const Point2 v00 = f.vectors[g.index(ix, iy)];
  const Point2 v10 = f.vectors[g.index(ix + 1, iy)];
  const Point2 v01 = f.vectors[g.index(ix, iy + 1)];
  const Point2 v11 = f.vectors[g.index(ix + 1, iy + 1)];
  return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
}

struct AlignmentCurve {
  std::vector<int> t;                       // diffusion timesteps, ascending
  std::vector<std::optional<double>> cs;    // nullopt when every sample was excluded
  std::vector<int> included;
  std::vector<int> excluded;

  std::optional<double> at(int timestep) const {
    for (std::size_t i = 0; i < t.size(); ++i)
      if (t[i] == timestep) return cs[i];
    return std::nullopt;
  }
};

inline constexpr double kDegenerateNorm = 1e-12;

// Mean cosine similarity, at each timestep t, between the interpolated
// backward drift at every sample's state x_t and the vector from x_t to that
// sample's final generated point. `fields` must hold a backward field for
// every t = 1..T of the bundle.
inline AlignmentCurve drift_alignment(const TrajectoryBundle& b, const std::vector<DriftField>& fields) {
  if (b.samples < 1 || b.steps < 2) throw InvalidArgument("drift_alignment: bundle needs >= 2 recorded steps");
  const int T = b.T();
  std::map<int, const DriftField*> by_t;
  for (const auto& f : fields) by_t[f.t] = &f;
  AlignmentCurve curve;
  for (int t = 1; t <= T; ++t) {
    const auto it = by_t.find(t);
    if (it == by_t.end()) throw InvalidArgument("drift_alignment: no field for t=" + std::to_string(t));
    const int step = T - t;  // bundle index of state x_t
    double sum = 0.0;
    int inc = 0;
    int exc = 0;
    for (int i = 0; i < b.samples; ++i) {
      const Point2 x = b.at(i, step);
      const Point2 a = interpolate_field(*it->second, x);
      const Point2 d = b.final_state(i) - x;
      const double na = norm(a);
      const double nd = norm(d);
      if (na < kDegenerateNorm || nd < kDegenerateNorm) {
        ++exc;
        continue;
      }
      sum += std::clamp(dot(a, d) / (na * nd), -1.0, 1.0);
      ++inc;
    }
    curve.t.push_back(t);
    curve.cs.push_back(inc > 0 ? std::optional<double>(sum / inc) : std::nullopt);
    curve.included.push_back(inc);
    curve.excluded.push_back(exc);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// CSV dumps

inline void write_fields(std::ostream& out, const std::vector<DriftField>& fields) {
  out << "t,node_x,node_y,vec_x,vec_y,magnitude\n";
  for (const auto& f : fields) {
    for (std::size_t i = 0; i < f.grid.size(); ++i) {
      const Point2 n = f.grid.node(i);
      out << f.t << ',' << format_real(n.x) << ',' << format_real(n.y) << ',' << format_real(f.vectors[i].x) << ','
          << format_real(f.vectors[i].y) << ',' << format_real(f.magnitudes[i]) << '\n';
    }
  }
}

// Rebuilds fields from a dump; grid extents and resolution are recovered
// from the distinct node coordinates.
inline std::vector<DriftField> read_fields(std::istream& in, DriftKind kind, const std::string& where = "fields") {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError(where, 1, "empty field file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,node_x,node_y,vec_x,vec_y,magnitude") throw ParseError(where, 1, "unexpected header");
  struct Row {
    Point2 node;
    Point2 vec;
    double mag;
  };
  std::map<int, std::vector<Row>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_fields(line);
    long long t = 0;
    Row r{};
    if (f.size() != 6 || !parse_int(f[0], t) || !parse_real(f[1], r.node.x) || !parse_real(f[2], r.node.y) ||
        !parse_real(f[3], r.vec.x) || !parse_real(f[4], r.vec.y) || !parse_real(f[5], r.mag)) {
      throw ParseError(where, lineno, "malformed field row");
    }
    rows[static_cast<int>(t)].push_back(r);
  }
  std::vector<DriftField> out;
  for (auto& [t, rs] : rows) {
    std::set<double> xs;
    std::set<double> ys;
    for (const auto& r : rs) {
      xs.insert(r.node.x);
      ys.insert(r.node.y);
    }
    DriftField f;
    f.t = t;
    f.kind = kind;
    f.grid = {*xs.begin(), *xs.rbegin(), *ys.begin(), *ys.rbegin(), static_cast<int>(xs.size()),
              static_cast<int>(ys.size())};
    if (f.grid.size() != rs.size() || f.grid.nx < 2 || f.grid.ny < 2) {
      throw ParseError(where, lineno, "t=" + std::to_string(t) + ": rows do not form a regular grid");
    }
    for (const auto& r : rs) {
      f.vectors.push_back(r.vec);
      f.magnitudes.push_back(r.mag);
    }
    out.push_back(std::move(f));
  }
  return out;
}

inline void write_alignment(std::ostream& out, const AlignmentCurve& c) {
  out << "t,cs,included,excluded\n";
  for (std::size_t i = 0; i < c.t.size(); ++i) {
    out << c.t[i] << ',' << (c.cs[i] ? format_real(*c.cs[i]) : std::string()) << ',' << c.included[i] << ','
        << c.excluded[i] << '\n';
  }
}

inline AlignmentCurve read_alignment(std::istream& in, const std::string& where = "alignment") {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError(where, 1, "empty alignment file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,cs,included,excluded") throw ParseError(where, 1, "unexpected header");
  AlignmentCurve c;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_fields(line);
    long long t = 0;
    long long inc = 0;
    long long exc = 0;
    double cs = 0.0;
    const bool missing = f.size() == 4 && detail::blank(f[1]);
    if (f.size() != 4 || !parse_int(f[0], t) || (!missing && !parse_real(f[1], cs)) || !parse_int(f[2], inc) ||
        !parse_int(f[3], exc)) {
      throw ParseError(where, lineno, "malformed alignment row");
    }
    c.t.push_back(static_cast<int>(t));
    c.cs.push_back(missing ? std::nullopt : std::optional<double>(cs));
    c.included.push_back(static_cast<int>(inc));
    c.excluded.push_back(static_cast<int>(exc));
  }
  return c;
}

}  // namespace injected
