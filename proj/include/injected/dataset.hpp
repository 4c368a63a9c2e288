#pragma once

// Loading, normalization, replication and train/test splitting of 2D
// point clouds stored as two-column CSV.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "injected/common.hpp"

namespace injected {

struct RawPointCloud {
  std::string name;
  std::vector<Point2> points;
};

struct NormStats {
  double mean_x = 0.0;
  double mean_y = 0.0;
  double std_x = 1.0;
  double std_y = 1.0;

  Point2 apply(Point2 p) const { return {(p.x - mean_x) / std_x, (p.y - mean_y) / std_y}; }
  Point2 invert(Point2 p) const { return {p.x * std_x + mean_x, p.y * std_y + mean_y}; }
};

struct PointCloud {
  std::vector<Point2> points;
  NormStats stats;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct DataSplit {
  PointCloud train;
  PointCloud test;
  double split_fraction = 0.9;
  std::uint64_t seed = 0;
  // Indices into the replicated cloud, in shuffle order.
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

}  // namespace detail

// Parses CSV text. `where` names the source in error messages.
inline RawPointCloud parse_csv(std::istream& in, const std::string& where, std::string name = {}) {
  RawPointCloud cloud;
  cloud.name = std::move(name);
  std::string line;
  std::size_t lineno = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    if (lineno == 1 && sv.size() >= 3 && sv.substr(0, 3) == "\xEF\xBB\xBF") sv.remove_prefix(3);
    if (detail::blank(sv)) continue;
    const auto fields = detail::split_fields(sv);
    double x = 0.0;
    double y = 0.0;
    const bool numeric = fields.size() == 2 && parse_real(fields[0], x) && parse_real(fields[1], y);
    if (!numeric) {
      // A first row with a non-numeric token is a header.
      if (first_content) {
        first_content = false;
        continue;
      }
      throw ParseError(where, lineno, "expected two real numbers, got '" + line + "'");
    }
    first_content = false;
    if (!std::isfinite(x) || !std::isfinite(y)) {
      throw ParseError(where, lineno, "non-finite coordinate");
    }
    cloud.points.push_back({x, y});
  }
  if (cloud.points.empty()) throw ParseError(where, lineno, "no data rows");
  return cloud;
}

inline RawPointCloud load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("file not found: " + path.string());
  return parse_csv(in, path.string(), path.stem().string());
}

inline void write_csv(const std::filesystem::path& path, const std::vector<Point2>& points) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "x,y\n";
  for (const auto& p : points) out << format_real(p.x) << ',' << format_real(p.y) << '\n';
}

// Population statistics (divide by N).
inline NormStats compute_stats(const std::vector<Point2>& pts) {
  const double n = static_cast<double>(pts.size());
  NormStats s;
  double sx = 0.0;
  double sy = 0.0;
  for (const auto& p : pts) {
    sx += p.x;
    sy += p.y;
  }
  s.mean_x = sx / n;
  s.mean_y = sy / n;
  double vx = 0.0;
  double vy = 0.0;
  for (const auto& p : pts) {
    vx += (p.x - s.mean_x) * (p.x - s.mean_x);
    vy += (p.y - s.mean_y) * (p.y - s.mean_y);
  }
  s.std_x = std::sqrt(vx / n);
  s.std_y = std::sqrt(vy / n);
  return s;
}

inline PointCloud normalize(const RawPointCloud& cloud) {
  if (cloud.points.empty()) throw InvalidArgument("normalize: empty cloud");
  const NormStats s = compute_stats(cloud.points);
  if (!(s.std_x > 0.0) || !(s.std_y > 0.0)) {
    throw InvalidArgument("normalize: zero variance in " + std::string(s.std_x > 0.0 ? "y" : "x"));
  }
  PointCloud out;
  out.stats = s;
  out.points.reserve(cloud.points.size());
  for (const auto& p : cloud.points) out.points.push_back(s.apply(p));
  return out;
}

inline DataSplit replicate_and_split(const PointCloud& cloud, int copies, double train_fraction,
                                     std::uint64_t seed) {
  if (copies < 1) throw InvalidArgument("replicate_and_split: copies must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InvalidArgument("replicate_and_split: train_fraction must lie in (0, 1)");
  }
  std::vector<Point2> replicated;
  replicated.reserve(cloud.size() * static_cast<std::size_t>(copies));
  for (int c = 0; c < copies; ++c) replicated.insert(replicated.end(), cloud.points.begin(), cloud.points.end());

  std::vector<std::size_t> order(replicated.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(order.size())));

  DataSplit split;
  split.split_fraction = train_fraction;
  split.seed = seed;
  split.train.stats = split.test.stats = cloud.stats;
  split.train_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  for (auto i : split.train_indices) split.train.points.push_back(replicated[i]);
  for (auto i : split.test_indices) split.test.points.push_back(replicated[i]);
  return split;
}

}  // namespace injected
