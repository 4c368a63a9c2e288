#pragma once

// End-to-end pipeline stages behind the command-line tool. Each stage reads
// and writes plain files in one run directory:
//
//   model.txt               trained denoiser
//   loss_epoch.csv          epoch,loss
//   mse_per_timestep.csv    t,mse (held-out split)
//   trajectory.csv          sample,step,x,y
//   metrics.txt             key = value report
//   displacement.csv        sample,displacement
//   velocity.csv            step,velocity
//   clusters.csv            sample,label
//   alignment.csv           t,cs,included,excluded
//   field_forward.csv       t,node_x,node_y,vec_x,vec_y,magnitude
//   field_backward.csv      same layout
//   original_normalized.csv x,y
//   figures/<dataset>/<config>/*.svg
//
// Randomness: one root seed; each stage uses derive_seed(root, "<stage>")
// with stages "split", "model", "train", "sample" and "kmeans".

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "injected/common.hpp"
#include "injected/dataset.hpp"
#include "injected/diffusion.hpp"
#include "injected/driftfield.hpp"
#include "injected/model.hpp"
#include "injected/plots.hpp"
#include "injected/trajmetrics.hpp"

namespace injected {

namespace fs = std::filesystem;

class UsageError : public Error {
 public:
  using Error::Error;
};

// Failure inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what) : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct NamedConfig {
  const char* name;
  InputMode input;
  TimeMode time;
  double alpha_min;
};

inline constexpr std::array<NamedConfig, 4> kModelConfigs = {{
    {"identity-zero-0.95", InputMode::identity, TimeMode::zero, 0.95},
    {"fourier-linear-0.95", InputMode::fourier, TimeMode::linear, 0.95},
    {"fourier-fourier-0.95", InputMode::fourier, TimeMode::fourier, 0.95},
    {"fourier-fourier-0.98", InputMode::fourier, TimeMode::fourier, 0.98},
}};

inline std::string valid_config_names() {
  std::string s;
  for (const auto& c : kModelConfigs) s += (s.empty() ? "" : ", ") + std::string(c.name);
  return s;
}

inline const NamedConfig& lookup_config(std::string_view name) {
  for (const auto& c : kModelConfigs)
    if (name == c.name) return c;
  throw UsageError("unknown config '" + std::string(name) + "'; valid names: " + valid_config_names());
}

// Name for a model's (modes, alpha_min); falls back to a descriptive tag.
inline std::string config_name_for(EmbeddingConfig e, double alpha_min) {
  for (const auto& c : kModelConfigs)
    if (c.input == e.input && c.time == e.time && c.alpha_min == alpha_min) return c.name;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", alpha_min);
  return to_string(e.input) + "-" + to_string(e.time) + "-" + buf;
}

struct RunConfig {
  fs::path dataset;
  std::string config = "fourier-fourier-0.95";
  int T = 50;
  int epochs = 2000;
  int batch_size = 32;
  double learning_rate = 4e-4;
  double clip_norm = 1.0;
  int samples = 1000;
  int k = 5;
  int grid_nx = 20;
  int grid_ny = 20;
  double grid_pad = 0.5;
  std::uint64_t seed = 42;
  fs::path out = "run";
  int copies = 6;
  double train_fraction = 0.9;
  std::vector<int> field_timesteps;  // empty: {1, ceil(T/4), ceil(T/2), ceil(3T/4), T}
  fs::path model;                    // defaults to <out>/model.txt
  fs::path trajectory;               // defaults to <out>/trajectory.csv

  fs::path model_path() const { return model.empty() ? out / "model.txt" : model; }
  fs::path trajectory_path() const { return trajectory.empty() ? out / "trajectory.csv" : trajectory; }

  std::vector<int> resolved_field_timesteps(int T_) const {
    if (!field_timesteps.empty()) return field_timesteps;
    auto ceil_div = [](int a, int b) { return (a + b - 1) / b; };
    std::vector<int> ts = {1, ceil_div(T_, 4), ceil_div(T_, 2), ceil_div(3 * T_, 4), T_};
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
    return ts;
  }
};

// "20x30" or "20".
inline std::pair<int, int> parse_grid_spec(const std::string& s) {
  const auto x = s.find_first_of("xX");
  long long a = 0;
  long long b = 0;
  const bool ok = x == std::string::npos ? parse_int(s, a) && (b = a, true)
                                         : parse_int(s.substr(0, x), a) && parse_int(s.substr(x + 1), b);
  if (!ok || a < 2 || b < 2) throw UsageError("bad grid spec '" + s + "' (expected NXxNY with both >= 2)");
  return {static_cast<int>(a), static_cast<int>(b)};
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (auto f : detail::split_fields(s)) {
    long long v = 0;
    if (!parse_int(f, v)) throw UsageError("bad integer list '" + s + "'");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

// Applies one key=value setting. Keys mirror RunConfig field names.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  auto as_int = [&](int lo) {
    long long v = 0;
    if (!parse_int(value, v) || v < lo) throw UsageError("bad value for " + key + ": '" + value + "'");
    return static_cast<int>(v);
  };
  auto as_real = [&] {
    double v = 0.0;
    if (!parse_real(value, v) || !(v > 0.0)) throw UsageError("bad value for " + key + ": '" + value + "'");
    return v;
  };
  if (key == "dataset") c.dataset = value;
  else if (key == "config") c.config = value;
  else if (key == "T") c.T = as_int(1);
  else if (key == "epochs") c.epochs = as_int(0);
  else if (key == "batch_size") c.batch_size = as_int(1);
  else if (key == "learning_rate") c.learning_rate = as_real();
  else if (key == "clip_norm") c.clip_norm = as_real();
  else if (key == "samples") c.samples = as_int(1);
  else if (key == "k") c.k = as_int(1);
  else if (key == "grid") std::tie(c.grid_nx, c.grid_ny) = parse_grid_spec(value);
  else if (key == "grid_pad") c.grid_pad = as_real();
  else if (key == "seed") {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || p != value.data() + value.size()) throw UsageError("bad seed '" + value + "'");
    c.seed = v;
  } else if (key == "out") c.out = value;
  else if (key == "copies") c.copies = as_int(1);
  else if (key == "train_fraction") c.train_fraction = as_real();
  else if (key == "field_timesteps") c.field_timesteps = parse_int_list(value);
  else if (key == "model") c.model = value;
  else if (key == "trajectory") c.trajectory = value;
  else throw UsageError("unknown setting '" + key + "'");
}

// Flat key=value file; '#' starts a comment.
inline void load_config_file(RunConfig& c, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config file not found: " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    apply_setting(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

// ---------------------------------------------------------------------------
// Key-value metrics report

class Report {
 public:
  void set(const std::string& key, const std::string& value) {
    if (!index_.count(key)) order_.push_back(key);
    index_[key] = value;
  }
  void set(const std::string& key, double v) { set(key, format_real(v)); }
  void set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }

  std::optional<std::string> get(const std::string& key) const {
    const auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  bool has(const std::string& key) const { return index_.count(key) > 0; }
  const std::vector<std::string>& keys() const { return order_; }

  void write(std::ostream& out) const {
    for (const auto& k : order_) out << k << " = " << index_.at(k) << '\n';
  }

  static Report read(std::istream& in, const std::string& where = "report") {
    Report r;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw ParseError(where, lineno, "expected 'key = value'");
      r.set(line.substr(0, eq), line.substr(eq + 3));
    }
    return r;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::string> index_;
};

// ---------------------------------------------------------------------------
// File helpers

namespace detail {

inline std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

inline std::ifstream open_in(const fs::path& p, const std::string& what) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("missing " + what + " file: " + p.string());
  return in;
}

// Two-column CSV of (integer key, real value) with a fixed header.
inline std::vector<std::pair<long long, double>> read_two_column(const fs::path& p, const std::string& header,
                                                                 const std::string& what) {
  auto in = open_in(p, what);
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw ParseError(p.string(), 1, "expected header '" + header + "'");
  }
  std::vector<std::pair<long long, double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    long long k = 0;
    double v = 0.0;
    if (f.size() != 2 || !parse_int(f[0], k) || !parse_real(f[1], v)) throw ParseError(p.string(), lineno, "bad row");
    rows.emplace_back(k, v);
  }
  return rows;
}

template <class Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace detail

inline ModelFile read_model_file(const fs::path& p) {
  auto in = detail::open_in(p, "model");
  return load_model(in, p.string());
}

inline TrajectoryBundle read_trajectory_file(const fs::path& p) {
  auto in = detail::open_in(p, "trajectory");
  return read_trajectories(in, p.string());
}

// ---------------------------------------------------------------------------
// Stages

struct TrainOutputs {
  fs::path model;
  fs::path loss_epoch;
  fs::path mse_per_timestep;
};

inline TrainOutputs cmd_train(const RunConfig& cfg) {
  const NamedConfig& named = lookup_config(cfg.config);
  if (cfg.dataset.empty()) throw UsageError("train: --dataset is required");
  const PointCloud cloud = detail::stage("dataset", [&] { return normalize(load_csv(cfg.dataset)); });
  const DataSplit split = detail::stage(
      "split", [&] { return replicate_and_split(cloud, cfg.copies, cfg.train_fraction, derive_seed(cfg.seed, "split")); });
  const NoiseSchedule sched = detail::stage("schedule", [&] { return build_schedule(cfg.T, named.alpha_min); });

  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.learning_rate = cfg.learning_rate;
  tc.clip_norm = cfg.clip_norm;
  tc.seed = cfg.seed;
  auto result = detail::stage("train", [&] {
    return train(DenoiserModel::create({named.input, named.time}, derive_seed(cfg.seed, "model")), split, sched, tc);
  });

  return detail::stage("write", [&] {
    TrainOutputs o{cfg.model_path(), cfg.out / "loss_epoch.csv", cfg.out / "mse_per_timestep.csv"};
    {
      auto f = detail::open_out(o.model);
      save_model(f, {result.model, named.alpha_min, cfg.T});
    }
    {
      auto f = detail::open_out(o.loss_epoch);
      f << "epoch,loss\n";
      for (std::size_t e = 0; e < result.losses.epoch_loss.size(); ++e)
        f << e + 1 << ',' << format_real(result.losses.epoch_loss[e]) << '\n';
    }
    {
      auto f = detail::open_out(o.mse_per_timestep);
      f << "t,mse\n";
      for (std::size_t t = 0; t < result.losses.mse_per_timestep.size(); ++t)
        f << t + 1 << ',' << format_real(result.losses.mse_per_timestep[t]) << '\n';
    }
    return o;
  });
}

inline fs::path cmd_sample(const RunConfig& cfg) {
  const ModelFile mf = detail::stage("model", [&] { return read_model_file(cfg.model_path()); });
  const NoiseSchedule sched = detail::stage("schedule", [&] { return build_schedule(mf.T, mf.alpha_min); });
  const TrajectoryBundle bundle =
      detail::stage("sample", [&] { return sample(mf.model, sched, cfg.samples, derive_seed(cfg.seed, "sample")); });
  return detail::stage("write", [&] {
    const fs::path p = cfg.trajectory_path();
    auto f = detail::open_out(p);
    write_trajectories(f, bundle);
    return p;
  });
}

struct Analysis {
  std::string dataset;
  std::string config;
  PointCloud original;
  TrajectoryBundle bundle;
  DisplacementResult displacement;
  VelocityCurve velocity;
  ClusterAssignment clusters;
  FidelityScore fidelity;
  Grid2D grid;
  std::vector<DriftField> forward_fields;
  std::vector<DriftField> backward_fields;      // every t = 1..T
  std::vector<DriftField> backward_selected;    // the configured subset
  AlignmentCurve alignment;
  Report report;
};

inline Analysis analyze(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw UsageError("analyze: --dataset is required");
  Analysis a;
  const RawPointCloud raw = detail::stage("dataset", [&] { return load_csv(cfg.dataset); });
  a.dataset = raw.name;
  a.original = detail::stage("dataset", [&] { return normalize(raw); });
  const ModelFile mf = detail::stage("model", [&] { return read_model_file(cfg.model_path()); });
  a.bundle = detail::stage("trajectory", [&] { return read_trajectory_file(cfg.trajectory_path()); });
  if (a.bundle.T() != mf.T) {
    throw StageError("analyze", "T mismatch: trajectory file has T=" + std::to_string(a.bundle.T()) +
                                    ", model file has T=" + std::to_string(mf.T));
  }
  a.config = config_name_for(mf.model.embed, mf.alpha_min);
  const NoiseSchedule sched = build_schedule(mf.T, mf.alpha_min);

  detail::stage("metrics", [&] {
    a.displacement = displacement(a.bundle);
    a.velocity = velocity(a.bundle);
    a.clusters = cluster_trajectories(a.bundle, cfg.k, derive_seed(cfg.seed, "kmeans"));
    a.fidelity = wasserstein_fidelity(a.original.points, a.bundle.final_states());
    return 0;
  });
  detail::stage("drift", [&] {
    a.grid = Grid2D::around(a.original.points, cfg.grid_pad, cfg.grid_nx, cfg.grid_ny);
    const auto selected = cfg.resolved_field_timesteps(mf.T);
    for (int t : selected) a.forward_fields.push_back(forward_drift(a.grid, t, a.original, sched));
    for (int t = 1; t <= mf.T; ++t) a.backward_fields.push_back(backward_drift(a.grid, t, mf.model, sched));
    for (int t : selected) a.backward_selected.push_back(a.backward_fields[static_cast<std::size_t>(t - 1)]);
    a.alignment = drift_alignment(a.bundle, a.backward_fields);
    return 0;
  });

  Report& r = a.report;
  r.set("run.dataset", a.dataset);
  r.set("run.config", a.config);
  r.set_int("run.T", mf.T);
  r.set_int("run.samples", a.bundle.samples);
  r.set("run.seed", std::to_string(cfg.seed));
  r.set("wasserstein.x", a.fidelity.w1_x);
  r.set("wasserstein.y", a.fidelity.w1_y);
  r.set("wasserstein.combined", a.fidelity.combined);
  {
    auto d = a.displacement.per_sample;
    std::sort(d.begin(), d.end());
    double sum = 0.0;
    for (double v : d) sum += v;
    const std::size_t n = d.size();
    r.set("displacement.mean", sum / static_cast<double>(n));
    r.set("displacement.median", n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]));
    r.set("displacement.min", d.front());
    r.set("displacement.max", d.back());
  }
  for (std::size_t k = 0; k < a.velocity.per_step.size(); ++k) r.set("velocity." + std::to_string(k), a.velocity.per_step[k]);
  r.set_int("cluster.k", a.clusters.k);
  r.set("cluster.inertia", a.clusters.inertia);
  {
    std::vector<long long> sizes(static_cast<std::size_t>(a.clusters.k), 0);
    for (int l : a.clusters.labels) ++sizes[static_cast<std::size_t>(l)];
    for (std::size_t c = 0; c < sizes.size(); ++c) r.set_int("cluster.size." + std::to_string(c), sizes[c]);
  }
  for (std::size_t i = 0; i < a.alignment.t.size(); ++i) {
    const std::string key = "alignment." + std::to_string(a.alignment.t[i]);
    if (a.alignment.cs[i]) r.set(key, *a.alignment.cs[i]);
    else r.set(key, "missing");
  }
  for (const auto& f : a.forward_fields) r.set("drift.forward.mean_magnitude." + std::to_string(f.t), f.mean_magnitude());
  for (const auto& f : a.backward_selected)
    r.set("drift.backward.mean_magnitude." + std::to_string(f.t), f.mean_magnitude());
  r.set_int("grid.nx", a.grid.nx);
  r.set_int("grid.ny", a.grid.ny);
  r.set("grid.x_min", a.grid.x_min);
  r.set("grid.x_max", a.grid.x_max);
  r.set("grid.y_min", a.grid.y_min);
  r.set("grid.y_max", a.grid.y_max);
  return a;
}

inline Report cmd_analyze(const RunConfig& cfg) {
  Analysis a = analyze(cfg);
  detail::stage("write", [&] {
    const fs::path& o = cfg.out;
    {
      auto f = detail::open_out(o / "metrics.txt");
      a.report.write(f);
    }
    {
      auto f = detail::open_out(o / "displacement.csv");
      f << "sample,displacement\n";
      for (std::size_t i = 0; i < a.displacement.per_sample.size(); ++i)
        f << i << ',' << format_real(a.displacement.per_sample[i]) << '\n';
    }
    {
      auto f = detail::open_out(o / "velocity.csv");
      f << "step,velocity\n";
      for (std::size_t k = 0; k < a.velocity.per_step.size(); ++k) f << k << ',' << format_real(a.velocity.per_step[k]) << '\n';
    }
    {
      auto f = detail::open_out(o / "clusters.csv");
      f << "sample,label\n";
      for (std::size_t i = 0; i < a.clusters.labels.size(); ++i) f << i << ',' << a.clusters.labels[i] << '\n';
    }
    {
      auto f = detail::open_out(o / "alignment.csv");
      write_alignment(f, a.alignment);
    }
    {
      auto f = detail::open_out(o / "field_forward.csv");
      write_fields(f, a.forward_fields);
    }
    {
      auto f = detail::open_out(o / "field_backward.csv");
      write_fields(f, a.backward_selected);
    }
    write_csv(o / "original_normalized.csv", a.original.points);
    return 0;
  });
  return a.report;
}

// Renders the figure set from an analyzed run directory and returns the
// written paths (relative to <out>/figures) in emission order.
inline std::vector<fs::path> cmd_plot(const RunConfig& cfg) {
  const fs::path& o = cfg.out;
  plot::FigureInputs in = detail::stage("plot inputs", [&] {
    plot::FigureInputs fi;
    auto rf = detail::open_in(o / "metrics.txt", "metrics report");
    const Report report = Report::read(rf, (o / "metrics.txt").string());
    fi.dataset = report.get("run.dataset").value_or("dataset");
    fi.config = report.get("run.config").value_or("config");

    fi.bundle = read_trajectory_file(cfg.trajectory_path());
    for (const auto& [i, d] : detail::read_two_column(o / "displacement.csv", "sample,displacement", "displacement"))
      fi.displacement.per_sample.push_back(d);
    fi.displacement.histogram = make_histogram(fi.displacement.per_sample, 30);
    for (const auto& [k, v] : detail::read_two_column(o / "velocity.csv", "step,velocity", "velocity"))
      fi.velocity.per_step.push_back(v);
    for (const auto& [i, l] : detail::read_two_column(o / "clusters.csv", "sample,label", "clusters"))
      fi.clusters.labels.push_back(static_cast<int>(l));
    long long k = 0;
    fi.clusters.k = parse_int(report.get("cluster.k").value_or(""), k) ? static_cast<int>(k) : 0;
    {
      auto f = detail::open_in(o / "alignment.csv", "alignment");
      fi.alignment = read_alignment(f, (o / "alignment.csv").string());
    }
    {
      auto f = detail::open_in(o / "field_forward.csv", "forward field");
      fi.forward_fields = read_fields(f, DriftKind::forward, (o / "field_forward.csv").string());
    }
    {
      auto f = detail::open_in(o / "field_backward.csv", "backward field");
      fi.backward_fields = read_fields(f, DriftKind::backward, (o / "field_backward.csv").string());
    }
    for (const auto& [t, v] : detail::read_two_column(o / "mse_per_timestep.csv", "t,mse", "noise prediction error"))
      fi.losses.mse_per_timestep.push_back(v);
    if (fs::exists(o / "loss_epoch.csv")) {
      for (const auto& [e, v] : detail::read_two_column(o / "loss_epoch.csv", "epoch,loss", "epoch loss"))
        fi.losses.epoch_loss.push_back(v);
    }
    if (fs::exists(o / "original_normalized.csv")) fi.original = load_csv(o / "original_normalized.csv").points;
    return fi;
  });
  const auto figures = detail::stage("plot", [&] { return plot::figure_bundle(in); });
  return detail::stage("write", [&] {
    std::vector<fs::path> written;
    for (const auto& fig : figures) {
      auto f = detail::open_out(o / "figures" / fig.path);
      f << fig.svg;
      written.push_back(fs::path("figures") / fig.path);
    }
    return written;
  });
}

}  // namespace injected
