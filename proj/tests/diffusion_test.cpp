#include "injected/diffusion.hpp"

#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <cmath>
#include <sstream>

using namespace injected;
using big = boost::multiprecision::cpp_bin_float_50;

namespace {

DenoiserModel zero_model() {
  auto m = DenoiserModel::create({InputMode::fourier, TimeMode::fourier}, 3);
  for (auto& l : m.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return m;
}

PointCloud ring(int n) {
  PointCloud pc;
  for (int i = 0; i < n; ++i) {
    const double a = 2 * 3.14159265358979 * i / n;
    pc.points.push_back({std::cos(a), std::sin(a)});
  }
  return pc;
}

big alpha_bar_big(int T, const char* alpha_min, int t) {
  const big lo(alpha_min);
  const big hi("0.9999");
  big prod = 1;
  for (int s = 0; s < t; ++s) prod *= hi + (lo - hi) * big(s) / big(T - 1);
  return prod;
}

}  // namespace

TEST(Schedule, ConstantTwoStep) {
  const auto s = build_schedule(2, 0.9, 0.9);
  ASSERT_EQ(s.alpha.size(), 2u);
  EXPECT_DOUBLE_EQ(s.alpha[0], 0.9);
  EXPECT_DOUBLE_EQ(s.alpha[1], 0.9);
  EXPECT_DOUBLE_EQ(s.bar(0), 1.0);
  EXPECT_DOUBLE_EQ(s.bar(1), 0.9);
  EXPECT_DOUBLE_EQ(s.bar(2), 0.81);
  EXPECT_NEAR(s.step_sigma(2), std::sqrt(0.1), 1e-15);
}

TEST(Schedule, Endpoints) {
  const auto s = build_schedule(50, 0.95);
  EXPECT_EQ(s.alpha.front(), 0.9999);
  EXPECT_NEAR(s.alpha.back(), 0.95, 1e-15);
  EXPECT_EQ(s.alpha_bar.size(), 51u);
}

TEST(Schedule, AlphaBarMatchesExtendedPrecision) {
  for (const char* amin : {"0.95", "0.98"}) {
    const auto s = build_schedule(50, std::stod(amin));
    for (int t = 0; t <= 50; ++t) {
      EXPECT_NEAR(s.bar(t), alpha_bar_big(50, amin, t).convert_to<double>(), 1e-13) << amin << " t=" << t;
    }
  }
  EXPECT_NEAR(build_schedule(50, 0.95).bar(50), 0.27967250019288429, 1e-13);
  EXPECT_NEAR(build_schedule(50, 0.98).bar(50), 0.60295159732971490, 1e-13);
}

TEST(Schedule, GentlerScheduleKeepsMoreSignal) {
  const auto a = build_schedule(50, 0.95);
  const auto b = build_schedule(50, 0.98);
  for (int t = 0; t <= 50; ++t) EXPECT_GE(b.bar(t), a.bar(t));
}

TEST(Schedule, ConsecutiveRatioIsStepAlpha) {
  const auto s = build_schedule(50, 0.95);
  for (int t = 1; t <= 50; ++t) {
    EXPECT_NEAR(s.bar(t) / s.bar(t - 1), s.step_alpha(t), 1e-12);
    EXPECT_LT(s.bar(t), s.bar(t - 1));
  }
}

TEST(Schedule, RejectsBadArguments) {
  EXPECT_THROW(build_schedule(0, 0.95), InvalidArgument);
  EXPECT_THROW(build_schedule(50, 0.0), InvalidArgument);
  EXPECT_THROW(build_schedule(50, 1.5, 1.0), InvalidArgument);
}

TEST(ForwardNoise, TimeZeroIsIdentity) {
  const auto s = build_schedule(50, 0.95);
  Batch2 x0(2, 2);
  x0 << 0.3, -0.7, 2.0, 1.0;
  Rng rng(1);
  const auto nb = forward_noise(x0, 0, s, rng);
  EXPECT_EQ(nb.x_t, x0);
  EXPECT_THROW(forward_noise(x0, 51, s, rng), InvalidArgument);
  EXPECT_THROW(forward_noise(x0, -1, s, rng), InvalidArgument);
}

TEST(ForwardNoise, QuarterSignalExample) {
  // alpha_bar = 0.25 at t = 2 for a constant 0.5 schedule.
  const auto s = build_schedule(2, 0.5, 0.5);
  ASSERT_DOUBLE_EQ(s.bar(2), 0.25);
  Batch2 x0(1, 2);
  x0 << 2.0, 2.0;
  Batch2 eps(1, 2);
  eps << 1.0, 0.0;
  const Batch2 xt = noise_with(x0, 2, s, eps);
  EXPECT_NEAR(xt(0, 0), 1.0 + std::sqrt(0.75), 1e-15);
  EXPECT_NEAR(xt(0, 1), 1.0, 1e-15);
}

TEST(ForwardNoise, MomentsMatchClosedForm) {
  const auto s = build_schedule(50, 0.95);
  const int n = 200000;
  Rng rng(17);
  for (int t : {5, 25, 50}) {
    Batch2 x0(n, 2);
    x0.col(0).setConstant(1.5);
    x0.col(1).setConstant(-0.5);
    const auto nb = forward_noise(x0, t, s, rng);
    const double expect_var = 1.0 - s.bar(t);
    for (int c = 0; c < 2; ++c) {
      const double mean = nb.x_t.col(c).mean();
      const double var = (nb.x_t.col(c).array() - mean).square().sum() / (n - 1);
      EXPECT_NEAR(mean, std::sqrt(s.bar(t)) * x0(0, c), 0.01) << "t=" << t;
      EXPECT_NEAR(var / expect_var, 1.0, 0.02) << "t=" << t;
    }
  }
}

TEST(ForwardNoise, IteratedStepsComposeToClosedForm) {
  // x_t = sqrt(a_t) x_{t-1} + sqrt(1-a_t) e_t, unrolled symbolically: the
  // signal coefficient and total variance must equal the closed form.
  const auto s = build_schedule(50, 0.95);
  big coef = 1;
  big var = 0;
  for (int t = 1; t <= 50; ++t) {
    const big a = big(s.step_alpha(t));
    coef *= boost::multiprecision::sqrt(a);
    var = a * var + (1 - a);
    EXPECT_NEAR(coef.convert_to<double>(), std::sqrt(s.bar(t)), 1e-13);
    EXPECT_NEAR(var.convert_to<double>(), 1.0 - s.bar(t), 1e-13);
  }
}

TEST(Train, ZeroEpochsReturnsModelUnchanged) {
  const auto m = DenoiserModel::create({InputMode::fourier, TimeMode::linear}, 2);
  const auto split = replicate_and_split(ring(40), 2, 0.9, 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto r = train(m, split, build_schedule(50, 0.95), cfg);
  EXPECT_TRUE(r.losses.epoch_loss.empty());
  for (std::size_t l = 0; l < m.layers.size(); ++l) EXPECT_EQ(r.model.layers[l].weight, m.layers[l].weight);
}

TEST(Train, RejectsTooSmallTrainingSet) {
  const auto m = DenoiserModel::create({InputMode::identity, TimeMode::zero}, 2);
  const auto split = replicate_and_split(ring(10), 1, 0.9, 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train(m, split, build_schedule(50, 0.95), cfg), InvalidArgument);
}

TEST(Train, DeterministicAndRecordsEveryEpoch) {
  const auto s = build_schedule(50, 0.95);
  const auto split = replicate_and_split(ring(60), 3, 0.9, 5);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 9;
  const auto m = DenoiserModel::create({InputMode::fourier, TimeMode::fourier}, 9);
  const auto a = train(m, split, s, cfg);
  const auto b = train(m, split, s, cfg);
  ASSERT_EQ(a.losses.epoch_loss.size(), 5u);
  EXPECT_EQ(a.losses.epoch_loss, b.losses.epoch_loss);
  EXPECT_EQ(a.losses.mse_per_timestep, b.losses.mse_per_timestep);
  EXPECT_EQ(a.losses.mse_per_timestep.size(), 50u);
  for (std::size_t l = 0; l < m.layers.size(); ++l) EXPECT_EQ(a.model.layers[l].weight, b.model.layers[l].weight);
  for (double v : a.losses.epoch_loss) EXPECT_TRUE(std::isfinite(v));
}

TEST(Sample, ShapeAndFiniteness) {
  const auto m = DenoiserModel::create({InputMode::fourier, TimeMode::fourier}, 4);
  const auto b = sample(m, build_schedule(50, 0.95), 1000, 11);
  EXPECT_EQ(b.samples, 1000);
  EXPECT_EQ(b.steps, 51);
  EXPECT_EQ(b.positions.size(), 51000u);
  for (const auto& p : b.positions) EXPECT_TRUE(std::isfinite(p.x) && std::isfinite(p.y));
  const auto last = sample(m, build_schedule(50, 0.95), 1000, 11, false);
  EXPECT_EQ(last.steps, 1);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(last.final_state(i), b.final_state(i));
}

TEST(Sample, NoNoiseScheduleWithZeroNetworkIsStationary) {
  const auto b = sample(zero_model(), build_schedule(10, 1.0, 1.0), 20, 3);
  for (int i = 0; i < b.samples; ++i)
    for (int k = 1; k < b.steps; ++k) EXPECT_EQ(b.at(i, k), b.at(i, 0));
}

TEST(Sample, ZeroNetworkReplaysRecurrence) {
  const auto s = build_schedule(50, 0.95);
  const std::uint64_t seed = 21;
  const auto b = sample(zero_model(), s, 8, seed);
  for (int i = 0; i < 8; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    double x = rng.normal();
    double y = rng.normal();
    EXPECT_EQ(b.at(i, 0), (Point2{x, y}));
    for (int t = 50; t >= 1; --t) {
      const double a = s.alpha[static_cast<std::size_t>(t - 1)];
      x /= std::sqrt(a);
      y /= std::sqrt(a);
      if (t > 1) {
        x += std::sqrt(1 - a) * rng.normal();
        y += std::sqrt(1 - a) * rng.normal();
      }
      const Point2 got = b.at(i, 50 - t + 1);
      EXPECT_NEAR(got.x, x, 1e-12);
      EXPECT_NEAR(got.y, y, 1e-12);
    }
  }
}

TEST(Sample, IndependentOfSampleCount) {
  const auto m = DenoiserModel::create({InputMode::fourier, TimeMode::linear}, 4);
  const auto s = build_schedule(50, 0.95);
  const auto few = sample(m, s, 3, 5);
  const auto many = sample(m, s, 30, 5);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 51; ++k) {
      EXPECT_NEAR(few.at(i, k).x, many.at(i, k).x, 1e-12);
      EXPECT_NEAR(few.at(i, k).y, many.at(i, k).y, 1e-12);
    }
}

TEST(TrajectoryFile, RoundTrip) {
  const auto m = DenoiserModel::create({InputMode::fourier, TimeMode::fourier}, 4);
  const auto b = sample(m, build_schedule(50, 0.95), 7, 2);
  std::stringstream ss;
  write_trajectories(ss, b);
  const auto back = read_trajectories(ss);
  EXPECT_EQ(back.samples, 7);
  EXPECT_EQ(back.steps, 51);
  EXPECT_EQ(back.positions, b.positions);
}

TEST(TrajectoryFile, RejectsMalformedInput) {
  std::istringstream bad_header("s,t,x,y\n0,0,1,2\n");
  EXPECT_THROW(read_trajectories(bad_header), ParseError);
  std::istringstream missing_row("sample,step,x,y\n0,0,1,2\n0,1,1,2\n1,0,1,2\n");
  EXPECT_THROW(read_trajectories(missing_row), ParseError);
  std::istringstream bad_value("sample,step,x,y\n0,0,1,nope\n");
  EXPECT_THROW(read_trajectories(bad_value), ParseError);
}
