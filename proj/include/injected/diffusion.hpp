#pragma once

// Linear noise schedule, forward noising, the training loop and the
// trajectory-recording reverse sampler.
//
// Indexing: alpha[s] for s = 0..T-1 and alpha_bar[t] = prod_{s<t} alpha[s]
// for t = 0..T. The transition x_{t-1} -> x_t therefore uses alpha[t-1];
// step_alpha(t) and step_sigma(t) return those per-transition values.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "injected/common.hpp"
#include "injected/dataset.hpp"
#include "injected/model.hpp"

namespace injected {

struct NoiseSchedule {
  int T = 50;
  double alpha_min = 0.95;
  double alpha_max = 0.9999;
  std::vector<double> alpha;      // T entries
  std::vector<double> beta;       // T entries, 1 - alpha
  std::vector<double> alpha_bar;  // T + 1 entries, alpha_bar[0] = 1
  std::vector<double> sigma;      // T entries, sqrt(beta)

  double step_alpha(int t) const { return alpha[static_cast<std::size_t>(t - 1)]; }
  double step_sigma(int t) const { return sigma[static_cast<std::size_t>(t - 1)]; }
  double bar(int t) const { return alpha_bar[static_cast<std::size_t>(t)]; }

  // (1 - alpha_t) / sqrt(1 - alpha_bar_t), the coefficient on predicted
  // noise in the reverse mean. Zero when the step adds no noise.
  double eps_coefficient(int t) const {
    const double b = 1.0 - step_alpha(t);
    if (b == 0.0) return 0.0;
    return b / std::sqrt(1.0 - bar(t));
  }
};

inline NoiseSchedule build_schedule(int T, double alpha_min, double alpha_max = 0.9999) {
  if (T < 1) throw InvalidArgument("build_schedule: T must be >= 1");
  if (!(alpha_min > 0.0 && alpha_min <= alpha_max && alpha_max <= 1.0)) {
    throw InvalidArgument("build_schedule: need 0 < alpha_min <= alpha_max <= 1, got alpha_min=" +
                          format_real(alpha_min) + " alpha_max=" + format_real(alpha_max));
  }
  NoiseSchedule s;
  s.T = T;
  s.alpha_min = alpha_min;
  s.alpha_max = alpha_max;
  s.alpha.resize(static_cast<std::size_t>(T));
  s.beta.resize(static_cast<std::size_t>(T));
  s.sigma.resize(static_cast<std::size_t>(T));
  s.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
  s.alpha_bar[0] = 1.0;
  for (int t = 0; t < T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
    const auto i = static_cast<std::size_t>(t);
    s.alpha[i] = alpha_max + (alpha_min - alpha_max) * frac;
    s.beta[i] = 1.0 - s.alpha[i];
    s.sigma[i] = std::sqrt(s.beta[i]);
    s.alpha_bar[i + 1] = s.alpha_bar[i] * s.alpha[i];
  }
  return s;
}

struct NoisedBatch {
  Batch2 x_t;
  Batch2 eps;
};

// Closed-form q(x_t | x_0) with given noise.
inline Batch2 noise_with(const Batch2& x0, int t, const NoiseSchedule& s, const Batch2& eps) {
  return std::sqrt(s.bar(t)) * x0 + std::sqrt(1.0 - s.bar(t)) * eps;
}

inline Batch2 standard_normal(Eigen::Index rows, Rng& rng) {
  Batch2 out(rows, 2);
  for (Eigen::Index r = 0; r < rows; ++r) {
    out(r, 0) = rng.normal();
    out(r, 1) = rng.normal();
  }
  return out;
}

inline NoisedBatch forward_noise(const Batch2& x0, int t, const NoiseSchedule& s, Rng& rng) {
  if (t < 0 || t > s.T) throw InvalidArgument("forward_noise: t out of range");
  NoisedBatch out;
  out.eps = standard_normal(x0.rows(), rng);
  out.x_t = noise_with(x0, t, s, out.eps);
  return out;
}

inline Batch2 to_batch(const std::vector<Point2>& pts) {
  Batch2 b(static_cast<Eigen::Index>(pts.size()), 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    b(static_cast<Eigen::Index>(i), 0) = pts[i].x;
    b(static_cast<Eigen::Index>(i), 1) = pts[i].y;
  }
  return b;
}

struct TrainConfig {
  int epochs = 2000;
  int batch_size = 32;
  double learning_rate = 4e-4;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
};

struct LossCurve {
  std::vector<double> epoch_loss;           // mean training loss per epoch
  std::vector<double> mse_per_timestep;     // index t-1 for t = 1..T, on the test split
};

struct TrainResult {
  DenoiserModel model;
  LossCurve losses;
};

// Held-out noise-prediction MSE at every t = 1..T.
inline std::vector<double> evaluate_per_timestep(const DenoiserModel& model, const PointCloud& data,
                                                 const NoiseSchedule& s, std::uint64_t seed) {
  std::vector<double> mse;
  if (data.empty()) return mse;
  const Batch2 x0 = to_batch(data.points);
  Rng rng(seed);
  for (int t = 1; t <= s.T; ++t) {
    const NoisedBatch nb = forward_noise(x0, t, s, rng);
    const Batch2 pred = predict_noise(model, nb.x_t, t, s.T);
    mse.push_back((pred - nb.eps).squaredNorm() / static_cast<double>(pred.size()));
  }
  return mse;
}

// Minibatch Adam on the noise-prediction objective. One pass over the
// shuffled training set per epoch, final partial batch kept, one timestep
// drawn uniformly from {1..T} per batch.
inline TrainResult train(DenoiserModel model, const DataSplit& split, const NoiseSchedule& s,
                         const TrainConfig& cfg) {
  if (split.train.empty()) throw InvalidArgument("train: empty training set");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0) || !(cfg.clip_norm > 0.0)) {
    throw InvalidArgument("train: invalid configuration");
  }
  if (split.train.size() < static_cast<std::size_t>(cfg.batch_size)) {
    throw InvalidArgument("train: training set (" + std::to_string(split.train.size()) +
                          " points) smaller than batch size " + std::to_string(cfg.batch_size));
  }
  TrainResult result;
  if (cfg.epochs == 0) {
    result.model = std::move(model);
    return result;
  }

  AdamState adam = AdamState::for_model(model, cfg.learning_rate, cfg.clip_norm);
  Rng rng(derive_seed(cfg.seed, "train"));
  const auto n = split.train.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Batch2 x0;
  std::vector<int> ts;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double weighted = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t len = std::min(bs, n - start);
      x0.resize(static_cast<Eigen::Index>(len), 2);
      for (std::size_t k = 0; k < len; ++k) {
        const Point2 p = split.train.points[order[start + k]];
        x0(static_cast<Eigen::Index>(k), 0) = p.x;
        x0(static_cast<Eigen::Index>(k), 1) = p.y;
      }
      const int t = static_cast<int>(rng.uniform_int(1, s.T));
      const NoisedBatch nb = forward_noise(x0, t, s, rng);
      ts.assign(len, t);
      auto lg = loss_and_gradients(model, nb.x_t, ts, s.T, nb.eps);
      weighted += lg.loss * static_cast<double>(len);
      adam_step(model, std::move(lg.gradients), adam);
    }
    result.losses.epoch_loss.push_back(weighted / static_cast<double>(n));
  }
  result.losses.mse_per_timestep = evaluate_per_timestep(model, split.test, s, derive_seed(cfg.seed, "eval"));
  result.model = std::move(model);
  return result;
}

// Reverse-process states of S samples. Step 0 is the initial noise (x_T),
// step T the generated output (x_0).
struct TrajectoryBundle {
  int samples = 0;
  int steps = 0;  // T + 1 when recorded, 1 otherwise
  std::vector<Point2> positions;  // sample-major: [sample * steps + step]
  std::string config_tag;

  Point2 at(int sample, int step) const {
    return positions[static_cast<std::size_t>(sample) * static_cast<std::size_t>(steps) +
                     static_cast<std::size_t>(step)];
  }
  Point2& at(int sample, int step) {
    return positions[static_cast<std::size_t>(sample) * static_cast<std::size_t>(steps) +
                     static_cast<std::size_t>(step)];
  }
  int T() const { return steps - 1; }
  Point2 final_state(int sample) const { return at(sample, steps - 1); }
  std::vector<Point2> state(int step) const {
    std::vector<Point2> out;
    out.reserve(static_cast<std::size_t>(samples));
    for (int i = 0; i < samples; ++i) out.push_back(at(i, step));
    return out;
  }
  std::vector<Point2> final_states() const { return state(steps - 1); }
  bool empty() const { return samples == 0 || steps == 0; }
};

// Ancestral sampling. Sample i draws its initial noise and every z from its
// own stream derive_seed(seed, i), so results do not depend on how samples
// are batched. No noise is added on the last step (t = 1).
inline TrajectoryBundle sample(const DenoiserModel& model, const NoiseSchedule& s, int n_samples,
                               std::uint64_t seed, bool record = true) {
  if (n_samples < 1) throw InvalidArgument("sample: n_samples must be >= 1");
  TrajectoryBundle bundle;
  bundle.samples = n_samples;
  bundle.steps = record ? s.T + 1 : 1;
  bundle.positions.resize(static_cast<std::size_t>(n_samples) * static_cast<std::size_t>(bundle.steps));

  std::vector<Rng> streams;
  streams.reserve(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) streams.emplace_back(derive_seed(seed, static_cast<std::uint64_t>(i)));

  Batch2 x(n_samples, 2);
  for (int i = 0; i < n_samples; ++i) {
    auto& rng = streams[static_cast<std::size_t>(i)];
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
  }
  auto store = [&](int step) {
    for (int i = 0; i < n_samples; ++i) bundle.at(i, step) = {x(i, 0), x(i, 1)};
  };
  if (record) store(0);

  for (int t = s.T; t >= 1; --t) {
    const Batch2 eps = predict_noise(model, x, t, s.T);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.step_alpha(t));
    const double coef = s.eps_coefficient(t);
    x = inv_sqrt_alpha * (x - coef * eps);
    if (t > 1) {
      const double sigma = s.step_sigma(t);
      for (int i = 0; i < n_samples; ++i) {
        auto& rng = streams[static_cast<std::size_t>(i)];
        x(i, 0) += sigma * rng.normal();
        x(i, 1) += sigma * rng.normal();
      }
    }
    if (record) store(s.T - t + 1);
  }
  if (!record) store(0);
  return bundle;
}

// Trajectory CSV: header `sample,step,x,y`, one row per (sample, step).
inline void write_trajectories(std::ostream& out, const TrajectoryBundle& b) {
  out << "sample,step,x,y\n";
  for (int i = 0; i < b.samples; ++i) {
    for (int k = 0; k < b.steps; ++k) {
      const Point2 p = b.at(i, k);
      out << i << ',' << k << ',' << format_real(p.x) << ',' << format_real(p.y) << '\n';
    }
  }
}

inline TrajectoryBundle read_trajectories(std::istream& in, const std::string& where = "trajectories") {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(where, 1, "empty trajectory file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "sample,step,x,y") throw ParseError(where, lineno, "expected header 'sample,step,x,y'");

  struct Row {
    long long sample;
    long long step;
    Point2 p;
  };
  std::vector<Row> rows;
  long long max_sample = -1;
  long long max_step = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_fields(line);
    Row r{};
    if (f.size() != 4 || !parse_int(f[0], r.sample) || !parse_int(f[1], r.step) || !parse_real(f[2], r.p.x) ||
        !parse_real(f[3], r.p.y) || r.sample < 0 || r.step < 0) {
      throw ParseError(where, lineno, "malformed trajectory row");
    }
    max_sample = std::max(max_sample, r.sample);
    max_step = std::max(max_step, r.step);
    rows.push_back(r);
  }
  if (rows.empty()) throw ParseError(where, lineno, "no trajectory rows");
  TrajectoryBundle b;
  b.samples = static_cast<int>(max_sample + 1);
  b.steps = static_cast<int>(max_step + 1);
  if (rows.size() != static_cast<std::size_t>(b.samples) * static_cast<std::size_t>(b.steps)) {
    throw ParseError(where, lineno, "expected " + std::to_string(b.samples) + "x" + std::to_string(b.steps) +
                                        " rows, found " + std::to_string(rows.size()));
  }
  b.positions.assign(rows.size(), Point2{std::nan(""), std::nan("")});
  std::vector<char> seen(rows.size(), 0);
  for (const auto& r : rows) {
    const auto idx = static_cast<std::size_t>(r.sample) * static_cast<std::size_t>(b.steps) +
                     static_cast<std::size_t>(r.step);
    if (seen[idx]) throw ParseError(where, 0, "duplicate row for sample " + std::to_string(r.sample));
    seen[idx] = 1;
    b.positions[idx] = r.p;
  }
  return b;
}

}  // namespace injected
