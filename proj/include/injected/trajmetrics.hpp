#pragma once

// Path length, per-step speed, trajectory clustering and per-coordinate
// Wasserstein-1 fidelity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "injected/common.hpp"
#include "injected/diffusion.hpp"

namespace injected {

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
};

// Equal-width bins over [min, max]; the last bin is closed.
inline Histogram make_histogram(const std::vector<double>& values, int bins) {
  Histogram h;
  if (values.empty() || bins < 1) return h;
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) h.edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * b / bins;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    auto b = static_cast<long>((v - lo) / (hi - lo) * bins);
    b = std::clamp(b, 0L, static_cast<long>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

struct DisplacementResult {
  std::vector<double> per_sample;
  Histogram histogram;
};

struct VelocityCurve {
  std::vector<double> per_step;  // transition k: step k -> k+1
};

inline void require_steps(const TrajectoryBundle& b, const char* who) {
  if (b.samples < 1 || b.steps < 2) throw InvalidArgument(std::string(who) + ": bundle needs >= 2 recorded steps");
}

inline DisplacementResult displacement(const TrajectoryBundle& b, int bins = 30) {
  require_steps(b, "displacement");
  DisplacementResult r;
  r.per_sample.resize(static_cast<std::size_t>(b.samples));
  for (int i = 0; i < b.samples; ++i) {
    double d = 0.0;
    for (int k = 0; k + 1 < b.steps; ++k) d += norm(b.at(i, k + 1) - b.at(i, k));
    r.per_sample[static_cast<std::size_t>(i)] = d;
  }
  r.histogram = make_histogram(r.per_sample, bins);
  return r;
}

inline VelocityCurve velocity(const TrajectoryBundle& b) {
  require_steps(b, "velocity");
  VelocityCurve v;
  v.per_step.assign(static_cast<std::size_t>(b.steps - 1), 0.0);
  for (int k = 0; k + 1 < b.steps; ++k) {
    double s = 0.0;
    for (int i = 0; i < b.samples; ++i) s += norm(b.at(i, k + 1) - b.at(i, k));
    v.per_step[static_cast<std::size_t>(k)] = s / b.samples;
  }
  return v;
}

// ---------------------------------------------------------------------------
// K-means

struct KMeansOptions {
  int k = 5;
  int max_iterations = 100;
  double tolerance = 1e-6;  // stop once no centroid moves further than this
  int restarts = 10;        // independent k-means++ starts; lowest inertia wins
  std::uint64_t seed = 0;
};

struct ClusterAssignment {
  std::vector<int> labels;
  std::vector<std::vector<double>> centroids;
  int k = 0;
  double inertia = 0.0;
  int iterations = 0;
  std::vector<double> inertia_history;  // of the winning restart, one entry per assignment pass
};

namespace detail {

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

// Nearest centroid, ties to the lowest index.
inline std::pair<int, double> nearest(const std::vector<double>& p, const std::vector<std::vector<double>>& cs) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < cs.size(); ++c) {
    const double d = sq_dist(p, cs[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return {best, best_d};
}

inline std::vector<std::vector<double>> kmeanspp_init(const std::vector<std::vector<double>>& pts, int k, Rng& rng) {
  const auto n = static_cast<std::int64_t>(pts.size());
  std::vector<std::vector<double>> cs;
  cs.push_back(pts[static_cast<std::size_t>(rng.uniform_int(0, n - 1))]);
  std::vector<double> d2(pts.size(), std::numeric_limits<double>::infinity());
  while (static_cast<int>(cs.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      d2[i] = std::min(d2[i], sq_dist(pts[i], cs.back()));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = pts.size() - 1;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
    }
    cs.push_back(pts[pick]);
  }
  return cs;
}

// Single-point transfers (Hartigan): move a point to another cluster whenever
// that lowers the inertia once both means are updated. Lloyd never makes such
// moves and can stall in poor fixed points on small sets. Every result here is
// still a Lloyd fixed point.
inline void transfer_refine(const std::vector<std::vector<double>>& pts, std::vector<int>& labels,
                            std::vector<std::vector<double>>& cs, const KMeansOptions& opt,
                            std::vector<double>& history) {
  const std::size_t k = cs.size();
  const std::size_t dim = pts.front().size();
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < pts.size(); ++i) labels[i] = nearest(pts[i], cs).first;
  auto recompute = [&] {
    std::vector<std::vector<double>> sum(k, std::vector<double>(dim, 0.0));
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto c = static_cast<std::size_t>(labels[i]);
      ++count[c];
      for (std::size_t d = 0; d < dim; ++d) sum[c][d] += pts[i][d];
    }
    double inertia = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      if (count[c] > 0)
        for (std::size_t d = 0; d < dim; ++d) cs[c][d] = sum[c][d] / static_cast<double>(count[c]);
    for (std::size_t i = 0; i < pts.size(); ++i) inertia += sq_dist(pts[i], cs[static_cast<std::size_t>(labels[i])]);
    return inertia;
  };
  recompute();
  for (int pass = 0; pass < opt.max_iterations; ++pass) {
    bool moved = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto a = static_cast<std::size_t>(labels[i]);
      if (count[a] <= 1) continue;
      const double na = static_cast<double>(count[a]);
      const double stay = na / (na - 1.0) * sq_dist(pts[i], cs[a]);
      std::size_t best = a;
      double best_gain = 1e-12 * std::max(stay, 1.0);
      for (std::size_t b = 0; b < k; ++b) {
        if (b == a) continue;
        const double nb = static_cast<double>(count[b]);
        const double gain = stay - nb / (nb + 1.0) * sq_dist(pts[i], cs[b]);
        if (gain > best_gain) {
          best_gain = gain;
          best = b;
        }
      }
      if (best == a) continue;
      const double nb = static_cast<double>(count[best]);
      for (std::size_t d = 0; d < dim; ++d) {
        cs[a][d] = (na * cs[a][d] - pts[i][d]) / (na - 1.0);
        cs[best][d] = count[best] == 0 ? pts[i][d] : (nb * cs[best][d] + pts[i][d]) / (nb + 1.0);
      }
      --count[a];
      ++count[best];
      labels[i] = static_cast<int>(best);
      moved = true;
    }
    if (!moved) break;
    history.push_back(recompute());
  }
}

inline ClusterAssignment lloyd(const std::vector<std::vector<double>>& pts, std::vector<std::vector<double>> cs,
                               const KMeansOptions& opt) {
  ClusterAssignment r;
  r.k = opt.k;
  r.labels.assign(pts.size(), 0);
  const std::size_t dim = pts.front().size();
  for (int it = 0; it < opt.max_iterations; ++it) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto [c, d] = nearest(pts[i], cs);
      r.labels[i] = c;
      inertia += d;
    }
    r.inertia_history.push_back(inertia);
    std::vector<std::vector<double>> next(cs.size(), std::vector<double>(dim, 0.0));
    std::vector<std::size_t> count(cs.size(), 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto c = static_cast<std::size_t>(r.labels[i]);
      ++count[c];
      for (std::size_t d = 0; d < dim; ++d) next[c][d] += pts[i][d];
    }
    double moved = 0.0;
    for (std::size_t c = 0; c < cs.size(); ++c) {
      if (count[c] == 0) {
        next[c] = cs[c];  // empty cluster keeps its centroid
      } else {
        for (auto& v : next[c]) v /= static_cast<double>(count[c]);
      }
      moved = std::max(moved, std::sqrt(sq_dist(next[c], cs[c])));
    }
    cs = std::move(next);
    r.iterations = it + 1;
    if (moved < opt.tolerance) break;
  }
  transfer_refine(pts, r.labels, cs, opt, r.inertia_history);
  r.inertia = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto [c, d] = nearest(pts[i], cs);
    r.labels[i] = c;
    r.inertia += d;
  }
  r.inertia_history.push_back(r.inertia);
  r.centroids = std::move(cs);
  return r;
}

}  // namespace detail

// K-means++ seeding followed by Lloyd iterations, best of `restarts` runs.
inline ClusterAssignment kmeans(const std::vector<std::vector<double>>& points, const KMeansOptions& opt) {
  if (opt.k < 1) throw InvalidArgument("kmeans: k must be >= 1");
  if (points.size() < static_cast<std::size_t>(opt.k)) {
    throw InvalidArgument("kmeans: " + std::to_string(points.size()) + " points is fewer than k=" +
                          std::to_string(opt.k));
  }
  Rng rng(opt.seed);
  ClusterAssignment best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, opt.restarts); ++r) {
    auto run = detail::lloyd(points, detail::kmeanspp_init(points, opt.k, rng), opt);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

// Step-major flattening: (x_0, y_0, x_1, y_1, ...).
inline std::vector<std::vector<double>> flatten_trajectories(const TrajectoryBundle& b) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(b.samples));
  for (int i = 0; i < b.samples; ++i) {
    auto& v = out[static_cast<std::size_t>(i)];
    v.reserve(2 * static_cast<std::size_t>(b.steps));
    for (int k = 0; k < b.steps; ++k) {
      v.push_back(b.at(i, k).x);
      v.push_back(b.at(i, k).y);
    }
  }
  return out;
}

inline ClusterAssignment cluster_trajectories(const TrajectoryBundle& b, int k = 5, std::uint64_t seed = 0) {
  if (b.samples < k) {
    throw InvalidArgument("cluster_trajectories: " + std::to_string(b.samples) + " samples is fewer than K=" +
                          std::to_string(k));
  }
  KMeansOptions opt;
  opt.k = k;
  opt.seed = seed;
  return kmeans(flatten_trajectories(b), opt);
}

// ---------------------------------------------------------------------------
// Wasserstein-1

// Exact W1 between two empirical 1D distributions of arbitrary sizes:
// integral over q in [0,1] of |F_a^-1(q) - F_b^-1(q)|. Breakpoints i/n and
// j/m are compared in integer units of 1/(n m).
inline double wasserstein1(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("wasserstein1: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const auto n = static_cast<std::uint64_t>(a.size());
  const auto m = static_cast<std::uint64_t>(b.size());
  std::uint64_t i = 0;
  std::uint64_t j = 0;
  std::uint64_t pos = 0;  // current q in units of 1/(n m)
  double acc = 0.0;
  while (i < n && j < m) {
    const std::uint64_t next_a = (i + 1) * m;
    const std::uint64_t next_b = (j + 1) * n;
    const std::uint64_t next = std::min(next_a, next_b);
    acc += std::abs(a[i] - b[j]) * static_cast<double>(next - pos);
    pos = next;
    if (next_a == next) ++i;
    if (next_b == next) ++j;
  }
  return acc / (static_cast<double>(n) * static_cast<double>(m));
}

struct FidelityScore {
  double w1_x = 0.0;
  double w1_y = 0.0;
  double combined = 0.0;  // (w1_x + w1_y) / 2, lower is better
};

inline FidelityScore wasserstein_fidelity(const std::vector<Point2>& original, const std::vector<Point2>& generated) {
  if (original.empty() || generated.empty()) throw InvalidArgument("wasserstein_fidelity: empty cloud");
  auto coord = [](const std::vector<Point2>& pts, bool x) {
    std::vector<double> v;
    v.reserve(pts.size());
    for (const auto& p : pts) v.push_back(x ? p.x : p.y);
    return v;
  };
  FidelityScore f;
  f.w1_x = wasserstein1(coord(original, true), coord(generated, true));
  f.w1_y = wasserstein1(coord(original, false), coord(generated, false));
  f.combined = 0.5 * (f.w1_x + f.w1_y);
  return f;
}

}  // namespace injected
