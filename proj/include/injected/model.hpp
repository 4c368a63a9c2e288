#pragma once

// Noise-prediction network: random-Fourier input/time embeddings feeding a
// ReLU MLP, with exact backpropagation and clipped Adam.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "injected/common.hpp"

namespace injected {

enum class InputMode { identity, fourier };
enum class TimeMode { zero, linear, fourier };

inline constexpr int kInputFrequencies = 32;  // rows of the input projection
inline constexpr int kTimeFrequencies = 16;   // rows of the time projection
inline constexpr int kHiddenWidth = 64;
inline constexpr int kHiddenLayers = 4;

inline std::string to_string(InputMode m) { return m == InputMode::identity ? "identity" : "fourier"; }

inline std::string to_string(TimeMode m) {
  switch (m) {
    case TimeMode::zero: return "zero";
    case TimeMode::linear: return "linear";
    case TimeMode::fourier: return "fourier";
  }
  return "?";
}

inline std::optional<InputMode> parse_input_mode(std::string_view s) {
  if (s == "identity") return InputMode::identity;
  if (s == "fourier") return InputMode::fourier;
  return std::nullopt;
}

inline std::optional<TimeMode> parse_time_mode(std::string_view s) {
  if (s == "zero") return TimeMode::zero;
  if (s == "linear") return TimeMode::linear;
  if (s == "fourier") return TimeMode::fourier;
  return std::nullopt;
}

struct EmbeddingConfig {
  InputMode input = InputMode::fourier;
  TimeMode time = TimeMode::fourier;

  int input_dim() const { return input == InputMode::identity ? 2 : 2 * kInputFrequencies; }
  int time_dim() const {
    switch (time) {
      case TimeMode::zero: return 0;
      case TimeMode::linear: return 1;
      case TimeMode::fourier: return 2 * kTimeFrequencies;
    }
    return 0;
  }
  int total_dim() const { return input_dim() + time_dim(); }

  friend bool operator==(const EmbeddingConfig&, const EmbeddingConfig&) = default;
};

// Frozen N(0, I) projections. Drawn once from the seed, never trained.
struct FourierBases {
  Eigen::MatrixXd input;  // kInputFrequencies x 2
  Eigen::MatrixXd time;   // kTimeFrequencies x 1
  std::uint64_t seed = 0;

  static FourierBases sample(std::uint64_t seed) {
    FourierBases b;
    b.seed = seed;
    Rng rng(seed);
    b.input.resize(kInputFrequencies, 2);
    b.time.resize(kTimeFrequencies, 1);
    for (int r = 0; r < kInputFrequencies; ++r)
      for (int c = 0; c < 2; ++c) b.input(r, c) = rng.normal();
    for (int r = 0; r < kTimeFrequencies; ++r) b.time(r, 0) = rng.normal();
    return b;
  }
};

// Affine layer y = x W + b with x a row vector.
struct Layer {
  Eigen::MatrixXd weight;  // fan_in x fan_out
  Eigen::RowVectorXd bias;
};

// Parameter-shaped container; also used for gradients and Adam moments.
using LayerStack = std::vector<Layer>;

using Batch2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;

struct DenoiserModel {
  LayerStack layers;
  EmbeddingConfig embed;
  FourierBases bases;
  std::uint64_t seed = 0;

  int in_dim() const { return embed.total_dim(); }

  // Fresh model. Bases come from the "bases" stream of `seed`, weights and
  // biases from the "init" stream, uniform in +-1/sqrt(fan_in).
  static DenoiserModel create(EmbeddingConfig embed, std::uint64_t seed, int hidden_width = kHiddenWidth,
                              int hidden_layers = kHiddenLayers) {
    DenoiserModel m;
    m.embed = embed;
    m.seed = seed;
    m.bases = FourierBases::sample(derive_seed(seed, "bases"));
    Rng rng(derive_seed(seed, "init"));
    int fan_in = embed.total_dim();
    for (int l = 0; l <= hidden_layers; ++l) {
      const int fan_out = l == hidden_layers ? 2 : hidden_width;
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Layer layer{Eigen::MatrixXd(fan_in, fan_out), Eigen::RowVectorXd(fan_out)};
      for (int r = 0; r < fan_in; ++r)
        for (int c = 0; c < fan_out; ++c) layer.weight(r, c) = (2.0 * rng.uniform() - 1.0) * bound;
      for (int c = 0; c < fan_out; ++c) layer.bias(c) = (2.0 * rng.uniform() - 1.0) * bound;
      m.layers.push_back(std::move(layer));
      fan_in = fan_out;
    }
    return m;
  }
};

inline LayerStack zeros_like(const LayerStack& ref) {
  LayerStack out;
  out.reserve(ref.size());
  for (const auto& l : ref) {
    out.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                   Eigen::RowVectorXd::Zero(l.bias.size())});
  }
  return out;
}

inline std::size_t parameter_count(const LayerStack& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

inline double global_norm(const LayerStack& layers) {
  double s = 0.0;
  for (const auto& l : layers) s += l.weight.squaredNorm() + l.bias.squaredNorm();
  return std::sqrt(s);
}

// s = t/T - 0.5
inline double normalized_time(int t, int T) { return static_cast<double>(t) / static_cast<double>(T) - 0.5; }

inline Eigen::VectorXd embed_input(Point2 x, InputMode mode, const FourierBases& bases) {
  if (mode == InputMode::identity) return Eigen::Vector2d(x.x, x.y);
  Eigen::VectorXd out(2 * kInputFrequencies);
  for (int k = 0; k < kInputFrequencies; ++k) {
    const double phase = bases.input(k, 0) * x.x + bases.input(k, 1) * x.y;
    out(k) = std::sin(phase);
    out(kInputFrequencies + k) = std::cos(phase);
  }
  return out;
}

inline Eigen::VectorXd embed_time(int t, int T, TimeMode mode, const FourierBases& bases) {
  const double s = normalized_time(t, T);
  switch (mode) {
    case TimeMode::zero: return Eigen::VectorXd(0);
    case TimeMode::linear: return Eigen::VectorXd::Constant(1, s);
    case TimeMode::fourier: {
      Eigen::VectorXd out(2 * kTimeFrequencies);
      for (int k = 0; k < kTimeFrequencies; ++k) {
        out(k) = std::sin(bases.time(k, 0) * s);
        out(kTimeFrequencies + k) = std::cos(bases.time(k, 0) * s);
      }
      return out;
    }
  }
  return {};
}

// Network input rows: [input embedding | time embedding].
inline Eigen::MatrixXd embed_batch(const DenoiserModel& model, const Batch2& x, std::span<const int> t, int T) {
  const auto B = x.rows();
  const int di = model.embed.input_dim();
  Eigen::MatrixXd in(B, model.in_dim());
  for (Eigen::Index r = 0; r < B; ++r) {
    in.row(r).head(di) = embed_input({x(r, 0), x(r, 1)}, model.embed.input, model.bases).transpose();
    if (model.embed.time != TimeMode::zero) {
      in.row(r).tail(model.embed.time_dim()) =
          embed_time(t[static_cast<std::size_t>(r)], T, model.embed.time, model.bases).transpose();
    }
  }
  return in;
}

namespace detail {

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activation output of each layer
};

inline Eigen::MatrixXd run_mlp(const LayerStack& layers, Eigen::MatrixXd h, ForwardCache* cache) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd z = h * layers[l].weight;
    z.rowwise() += layers[l].bias;
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(z);
    }
    if (l + 1 < layers.size()) {
      h = z.cwiseMax(0.0);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

}  // namespace detail

inline Batch2 predict_noise(const DenoiserModel& model, const Batch2& x, std::span<const int> t, int T) {
  return detail::run_mlp(model.layers, embed_batch(model, x, t, T), nullptr);
}

// Same timestep for every row.
inline Batch2 predict_noise(const DenoiserModel& model, const Batch2& x, int t, int T) {
  std::vector<int> ts(static_cast<std::size_t>(x.rows()), t);
  return predict_noise(model, x, ts, T);
}

struct LossAndGradients {
  double loss = 0.0;
  LayerStack gradients;
};

// Mean over all B x 2 entries of (target - prediction)^2 and its exact
// gradient with respect to every weight and bias.
inline LossAndGradients loss_and_gradients(const DenoiserModel& model, const Batch2& x, std::span<const int> t,
                                           int T, const Batch2& target) {
  detail::ForwardCache cache;
  const Eigen::MatrixXd pred = detail::run_mlp(model.layers, embed_batch(model, x, t, T), &cache);
  const Eigen::MatrixXd diff = pred - Eigen::MatrixXd(target);
  const double count = static_cast<double>(diff.size());

  LossAndGradients out;
  out.loss = diff.squaredNorm() / count;
  out.gradients.resize(model.layers.size());

  Eigen::MatrixXd g = (2.0 / count) * diff;
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    if (l + 1 < model.layers.size()) g = g.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
    out.gradients[l].weight = cache.inputs[l].transpose() * g;
    out.gradients[l].bias = g.colwise().sum();
    if (l > 0) g = g * model.layers[l].weight.transpose();
  }
  return out;
}

struct AdamState {
  LayerStack first_moment;
  LayerStack second_moment;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double learning_rate = 4e-4;
  double clip_norm = 1.0;

  static AdamState for_model(const DenoiserModel& m, double lr = 4e-4, double clip = 1.0) {
    AdamState s;
    s.first_moment = zeros_like(m.layers);
    s.second_moment = zeros_like(m.layers);
    s.learning_rate = lr;
    s.clip_norm = clip;
    return s;
  }
};

// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
// Returns the norm before clipping.
inline double clip_global_norm(LayerStack& grads, double max_norm) {
  const double n = global_norm(grads);
  if (n > max_norm) {
    const double scale = max_norm / n;
    for (auto& l : grads) {
      l.weight *= scale;
      l.bias *= scale;
    }
  }
  return n;
}

// One clipped Adam update with bias correction. Consumes `grads`.
inline double adam_step(DenoiserModel& model, LayerStack grads, AdamState& state) {
  const double pre_clip = clip_global_norm(grads, state.clip_norm);
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const double lr = state.learning_rate;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double eps = state.eps;
  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseAbs2();
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    update(model.layers[l].weight, grads[l].weight, state.first_moment[l].weight, state.second_moment[l].weight);
    update(model.layers[l].bias, grads[l].bias, state.first_moment[l].bias, state.second_moment[l].bias);
  }
  return pre_clip;
}

// ---------------------------------------------------------------------------
// Model file
//
//   INJECTED-MODEL v1
//   input_mode=fourier
//   time_mode=fourier
//   alpha_min=0.94999999999999996
//   T=50
//   seed=42
//   tensor fourier.input 32 2
//   <rows of space-separated values>
//   ...
//
// Values use %.17g so every double survives the round trip bit for bit.

struct ModelFile {
  DenoiserModel model;
  double alpha_min = 0.95;
  int T = 50;
};

namespace detail {

template <class Mat>
void write_tensor(std::ostream& out, const std::string& name, const Mat& m) {
  out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ' ';
      out << format_real(m(r, c));
    }
    out << '\n';
  }
}

class LineReader {
 public:
  LineReader(std::istream& in, std::string where) : in_(in), where_(std::move(where)) {}

  std::string next(const std::string& expecting) {
    std::string line;
    if (!std::getline(in_, line)) fail("unexpected end of file, expected " + expecting);
    ++line_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(where_, line_, what); }

 private:
  std::istream& in_;
  std::string where_;
  std::size_t line_ = 0;
};

inline std::string read_value(LineReader& r, const std::string& key) {
  const std::string line = r.next(key + "=...");
  const std::string prefix = key + "=";
  if (line.rfind(prefix, 0) != 0) r.fail("expected '" + prefix + "', got '" + line + "'");
  return line.substr(prefix.size());
}

inline Eigen::MatrixXd read_tensor(LineReader& r, const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  const std::string header = r.next("tensor " + name);
  std::istringstream hs(header);
  std::string kw;
  std::string got;
  long long nr = -1;
  long long nc = -1;
  hs >> kw >> got >> nr >> nc;
  if (kw != "tensor" || got != name) r.fail("expected tensor " + name + ", got '" + header + "'");
  if (nr != rows || (cols >= 0 && nc != cols)) {
    r.fail("tensor " + name + ": shape " + std::to_string(nr) + "x" + std::to_string(nc) + " does not match expected " +
           std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (nc <= 0) r.fail("tensor " + name + ": bad column count");
  Eigen::MatrixXd m(nr, nc);
  for (Eigen::Index i = 0; i < nr; ++i) {
    const std::string row = r.next("row of tensor " + name);
    std::string_view sv(row);
    Eigen::Index j = 0;
    std::size_t pos = 0;
    while (pos < sv.size()) {
      while (pos < sv.size() && sv[pos] == ' ') ++pos;
      if (pos >= sv.size()) break;
      std::size_t end = sv.find(' ', pos);
      if (end == std::string_view::npos) end = sv.size();
      double v = 0.0;
      if (j >= nc || !parse_real(sv.substr(pos, end - pos), v)) {
        r.fail("tensor " + name + ": malformed row " + std::to_string(i));
      }
      m(i, j++) = v;
      pos = end;
    }
    if (j != nc) r.fail("tensor " + name + ": row " + std::to_string(i) + " has " + std::to_string(j) + " values");
  }
  return m;
}

}  // namespace detail

inline void save_model(std::ostream& out, const ModelFile& f) {
  const auto& m = f.model;
  out << "INJECTED-MODEL v1\n";
  out << "input_mode=" << to_string(m.embed.input) << '\n';
  out << "time_mode=" << to_string(m.embed.time) << '\n';
  out << "alpha_min=" << format_real(f.alpha_min) << '\n';
  out << "T=" << f.T << '\n';
  out << "seed=" << m.seed << '\n';
  out << "layers=" << m.layers.size() << '\n';
  detail::write_tensor(out, "fourier.input", m.bases.input);
  detail::write_tensor(out, "fourier.time", m.bases.time);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    detail::write_tensor(out, "layer" + std::to_string(l) + ".weight", m.layers[l].weight);
    detail::write_tensor(out, "layer" + std::to_string(l) + ".bias", m.layers[l].bias);
  }
}

inline ModelFile load_model(std::istream& in, const std::string& where = "model") {
  detail::LineReader r(in, where);
  if (r.next("header") != "INJECTED-MODEL v1") r.fail("not an INJECTED-MODEL v1 file");
  ModelFile f;
  auto& m = f.model;
  const auto im = parse_input_mode(detail::read_value(r, "input_mode"));
  if (!im) r.fail("unknown input_mode");
  const auto tm = parse_time_mode(detail::read_value(r, "time_mode"));
  if (!tm) r.fail("unknown time_mode");
  m.embed = {*im, *tm};
  if (!parse_real(detail::read_value(r, "alpha_min"), f.alpha_min)) r.fail("bad alpha_min");
  long long v = 0;
  if (!parse_int(detail::read_value(r, "T"), v) || v < 1) r.fail("bad T");
  f.T = static_cast<int>(v);
  const std::string seed_text = detail::read_value(r, "seed");
  {
    auto [p, ec] = std::from_chars(seed_text.data(), seed_text.data() + seed_text.size(), m.seed);
    if (ec != std::errc{} || p != seed_text.data() + seed_text.size()) r.fail("bad seed");
  }
  if (!parse_int(detail::read_value(r, "layers"), v) || v < 1) r.fail("bad layer count");
  const auto n_layers = static_cast<std::size_t>(v);

  m.bases.seed = derive_seed(m.seed, "bases");
  m.bases.input = detail::read_tensor(r, "fourier.input", kInputFrequencies, 2);
  m.bases.time = detail::read_tensor(r, "fourier.time", kTimeFrequencies, 1);
  Eigen::Index fan_in = m.embed.total_dim();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::string base = "layer" + std::to_string(l);
    Layer layer;
    layer.weight = detail::read_tensor(r, base + ".weight", fan_in, l + 1 == n_layers ? 2 : -1);
    layer.bias = detail::read_tensor(r, base + ".bias", 1, layer.weight.cols());
    fan_in = layer.weight.cols();
    m.layers.push_back(std::move(layer));
  }
  return f;
}

}  // namespace injected
