#include "injected/trajmetrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace injected;

namespace {

TrajectoryBundle make_bundle(const std::vector<std::vector<Point2>>& paths) {
  TrajectoryBundle b;
  b.samples = static_cast<int>(paths.size());
  b.steps = static_cast<int>(paths.front().size());
  for (const auto& p : paths) b.positions.insert(b.positions.end(), p.begin(), p.end());
  return b;
}

TrajectoryBundle random_bundle(int samples, int steps, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<Point2>> paths(static_cast<std::size_t>(samples));
  for (auto& p : paths)
    for (int k = 0; k < steps; ++k) p.push_back({rng.normal(), rng.normal()});
  return make_bundle(paths);
}

double inertia_of(const std::vector<std::vector<double>>& pts, const std::vector<int>& labels, int k) {
  const std::size_t d = pts.front().size();
  std::vector<std::vector<double>> c(static_cast<std::size_t>(k), std::vector<double>(d, 0.0));
  std::vector<int> n(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ++n[static_cast<std::size_t>(labels[i])];
    for (std::size_t j = 0; j < d; ++j) c[static_cast<std::size_t>(labels[i])][j] += pts[i][j];
  }
  for (int a = 0; a < k; ++a)
    for (auto& v : c[static_cast<std::size_t>(a)]) v /= n[static_cast<std::size_t>(a)];
  double s = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double e = pts[i][j] - c[static_cast<std::size_t>(labels[i])][j];
      s += e * e;
    }
  return s;
}

// W1 as the integral of |F_a - F_b| over the merged support.
double w1_cdf_integral(std::vector<double> a, std::vector<double> b) {
  std::vector<double> all = a;
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  auto cdf = [](const std::vector<double>& v, double x) {
    return static_cast<double>(std::upper_bound(v.begin(), v.end(), x) - v.begin()) / static_cast<double>(v.size());
  };
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < all.size(); ++i) s += std::abs(cdf(a, all[i]) - cdf(b, all[i])) * (all[i + 1] - all[i]);
  return s;
}

}  // namespace

TEST(Displacement, ThreeFourFive) {
  const auto b = make_bundle({{{0, 0}, {3, 4}}});
  const auto d = displacement(b);
  ASSERT_EQ(d.per_sample.size(), 1u);
  EXPECT_DOUBLE_EQ(d.per_sample[0], 5.0);
}

TEST(Displacement, MatchesDirectSummation) {
  const auto b = random_bundle(40, 51, 3);
  const auto d = displacement(b, 30);
  for (int i = 0; i < b.samples; ++i) {
    double s = 0.0;
    for (int k = 1; k < b.steps; ++k) {
      const double dx = b.positions[static_cast<std::size_t>(i * b.steps + k)].x -
                        b.positions[static_cast<std::size_t>(i * b.steps + k - 1)].x;
      const double dy = b.positions[static_cast<std::size_t>(i * b.steps + k)].y -
                        b.positions[static_cast<std::size_t>(i * b.steps + k - 1)].y;
      s += std::hypot(dx, dy);
    }
    EXPECT_NEAR(d.per_sample[static_cast<std::size_t>(i)], s, 1e-12);
  }
  EXPECT_EQ(d.histogram.counts.size(), 30u);
  EXPECT_EQ(std::accumulate(d.histogram.counts.begin(), d.histogram.counts.end(), 0), 40);
}

TEST(Displacement, NeedsTwoSteps) {
  EXPECT_THROW(displacement(make_bundle({{{0, 0}}})), InvalidArgument);
}

TEST(Velocity, MeanOverSamples) {
  const auto b = make_bundle({{{0, 0}, {1, 0}, {1, 0}}, {{0, 0}, {0, 3}, {0, 3}}});
  const auto v = velocity(b);
  ASSERT_EQ(v.per_step.size(), 2u);
  EXPECT_DOUBLE_EQ(v.per_step[0], 2.0);
  EXPECT_DOUBLE_EQ(v.per_step[1], 0.0);
}

TEST(Velocity, SumTimesSamplesEqualsTotalDisplacement) {
  const auto b = random_bundle(25, 51, 8);
  const auto v = velocity(b);
  const auto d = displacement(b);
  const double sv = std::accumulate(v.per_step.begin(), v.per_step.end(), 0.0);
  const double sd = std::accumulate(d.per_sample.begin(), d.per_sample.end(), 0.0);
  EXPECT_NEAR(b.samples * sv, sd, 1e-9);
}

TEST(KMeans, SeparatesObviousClusters) {
  std::vector<std::vector<double>> pts;
  const double centers[3][2] = {{0, 0}, {10, 10}, {-10, 10}};
  Rng rng(1);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 20; ++i) pts.push_back({centers[c][0] + 0.1 * rng.normal(), centers[c][1] + 0.1 * rng.normal()});
  KMeansOptions opt;
  opt.k = 3;
  opt.seed = 5;
  const auto r = kmeans(pts, opt);
  for (int c = 0; c < 3; ++c)
    for (int i = 1; i < 20; ++i) EXPECT_EQ(r.labels[static_cast<std::size_t>(c * 20 + i)], r.labels[static_cast<std::size_t>(c * 20)]);
  EXPECT_NE(r.labels[0], r.labels[20]);
  EXPECT_NE(r.labels[0], r.labels[40]);
  EXPECT_NE(r.labels[20], r.labels[40]);
}

TEST(KMeans, FindsOptimumOfSmallExhaustiveCase) {
  const std::vector<std::vector<double>> pts = {{0, 0}, {0.5, 0.2}, {1, 0}, {5, 5}, {5.5, 4.8}, {6, 6}};
  double best = std::numeric_limits<double>::infinity();
  for (int mask = 1; mask < (1 << 6) - 1; ++mask) {
    std::vector<int> labels(6);
    for (int i = 0; i < 6; ++i) labels[static_cast<std::size_t>(i)] = (mask >> i) & 1;
    best = std::min(best, inertia_of(pts, labels, 2));
  }
  KMeansOptions opt;
  opt.k = 2;
  opt.seed = 3;
  const auto r = kmeans(pts, opt);
  EXPECT_NEAR(r.inertia, best, 1e-12);
  EXPECT_NEAR(inertia_of(pts, r.labels, 2), r.inertia, 1e-12);
}

TEST(KMeans, DeterministicForSeed) {
  const auto b = random_bundle(60, 11, 4);
  const auto a = cluster_trajectories(b, 5, 77);
  const auto c = cluster_trajectories(b, 5, 77);
  EXPECT_EQ(a.labels, c.labels);
  EXPECT_EQ(a.inertia, c.inertia);
  EXPECT_EQ(static_cast<int>(a.centroids.size()), 5);
}

TEST(KMeans, InertiaNeverIncreases) {
  const auto pts = flatten_trajectories(random_bundle(200, 6, 12));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    KMeansOptions opt;
    opt.k = 5;
    opt.seed = seed;
    const auto r = kmeans(pts, opt);
    ASSERT_FALSE(r.inertia_history.empty());
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
      EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] + 1e-9);
  }
}

TEST(KMeans, TranslationInvariant) {
  auto pts = flatten_trajectories(random_bundle(80, 4, 21));
  KMeansOptions opt;
  opt.k = 4;
  opt.seed = 2;
  const auto a = kmeans(pts, opt);
  for (auto& p : pts)
    for (std::size_t j = 0; j < p.size(); ++j) p[j] += j % 2 ? -3.0 : 7.0;
  const auto b = kmeans(pts, opt);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NEAR(a.inertia, b.inertia, 1e-8);
}

TEST(KMeans, RejectsFewerSamplesThanClusters) {
  EXPECT_THROW(cluster_trajectories(random_bundle(3, 5, 1), 5), InvalidArgument);
}

TEST(FlattenTrajectories, StepMajorLayout) {
  const auto f = flatten_trajectories(make_bundle({{{1, 2}, {3, 4}}}));
  EXPECT_EQ(f[0], (std::vector<double>{1, 2, 3, 4}));
}

TEST(Wasserstein, SimpleExamples) {
  EXPECT_DOUBLE_EQ(wasserstein1({0, 1}, {0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(wasserstein1({0}, {3}), 3.0);
  EXPECT_DOUBLE_EQ(wasserstein1({0, 1, 2}, {1, 2, 3}), 1.0);
  EXPECT_DOUBLE_EQ(wasserstein1({0, 2}, {1}), 1.0);
  EXPECT_THROW(wasserstein1({}, {1}), InvalidArgument);
}

TEST(Wasserstein, EqualSizesMatchSortedPairing) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> a(50), b(50);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal() * 2 + 0.5;
    auto sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double s = 0.0;
    for (std::size_t i = 0; i < sa.size(); ++i) s += std::abs(sa[i] - sb[i]);
    EXPECT_NEAR(wasserstein1(a, b), s / 50, 1e-12);
  }
}

TEST(Wasserstein, UnequalSizesMatchCdfIntegral) {
  Rng rng(7);
  for (auto [n, m] : {std::pair{7, 3}, std::pair{142, 1000}, std::pair{10, 15}}) {
    std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(m));
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.uniform() * 3 - 1;
    EXPECT_NEAR(wasserstein1(a, b), w1_cdf_integral(a, b), 1e-10) << n << "x" << m;
  }
}

TEST(Wasserstein, MetricAxioms) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(20), b(13), c(31);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal() + 1;
    for (auto& v : c) v = rng.uniform() * 4;
    EXPECT_NEAR(wasserstein1(a, b), wasserstein1(b, a), 1e-12);
    EXPECT_EQ(wasserstein1(a, a), 0.0);
    EXPECT_GE(wasserstein1(a, b), 0.0);
    EXPECT_LE(wasserstein1(a, c), wasserstein1(a, b) + wasserstein1(b, c) + 1e-12);
  }
}

TEST(Wasserstein, FidelityAveragesAxes) {
  const auto f = wasserstein_fidelity({{0, 0}}, {{1, 3}});
  EXPECT_DOUBLE_EQ(f.w1_x, 1.0);
  EXPECT_DOUBLE_EQ(f.w1_y, 3.0);
  EXPECT_DOUBLE_EQ(f.combined, 2.0);
}
