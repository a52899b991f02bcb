#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mtscid/error.hpp"
#include "mtscid/random.hpp"
#include "mtscid/tensor.hpp"

namespace mtscid {

/// A labeled multivariate series, values stored row-major as [T, C].
struct TsDataset {
  std::size_t length = 0;    // T
  std::size_t variates = 0;  // C
  std::vector<double> values;
  std::optional<std::vector<std::uint8_t>> labels;
  std::vector<std::string> variate_names;

  double at(std::size_t t, std::size_t c) const { return values[t * variates + c]; }

  void Validate() const {
    if (values.size() != length * variates) throw ShapeError("dataset values != T*C");
    if (labels && labels->size() != length) throw ShapeError("label length != T");
    if (!variate_names.empty() && variate_names.size() != variates) {
      throw ShapeError("variate name count != C");
    }
  }
};

namespace detail {

inline std::vector<std::string_view> SplitCsv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline std::string_view Trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> ParseDouble(std::string_view s) {
  s = Trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a comma-separated file with a header row. Numeric columns become
/// variates in header order; a trailing column named `label` becomes the
/// labels. Blank lines and lines starting with '#' are skipped.
inline TsDataset LoadCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  TsDataset ds;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  bool has_label = false;
  std::vector<std::uint8_t> labels;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view trimmed = detail::Trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    auto cells = detail::SplitCsv(trimmed);
    if (!have_header) {
      for (auto c : cells) ds.variate_names.emplace_back(detail::Trim(c));
      if (!ds.variate_names.empty() && ds.variate_names.back() == "label") {
        has_label = true;
        ds.variate_names.pop_back();
      }
      ds.variates = ds.variate_names.size();
      if (ds.variates == 0) throw IoError(path + ": header has no value columns");
      have_header = true;
      continue;
    }
    const std::size_t want = ds.variates + (has_label ? 1 : 0);
    if (cells.size() != want) {
      throw IoError(path + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(want) + " cells, got " + std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < ds.variates; ++c) {
      const auto v = detail::ParseDouble(cells[c]);
      if (!v) {
        throw IoError(path + ":" + std::to_string(line_no) + ": non-numeric cell '" +
                      std::string(detail::Trim(cells[c])) + "'");
      }
      if (!std::isfinite(*v)) {
        throw IoError(path + ":" + std::to_string(line_no) + ": non-finite value in row " +
                      std::to_string(ds.length + 1));
      }
      ds.values.push_back(*v);
    }
    if (has_label) {
      const auto v = detail::ParseDouble(cells.back());
      if (!v || (*v != 0.0 && *v != 1.0)) {
        throw IoError(path + ":" + std::to_string(line_no) + ": label must be 0 or 1");
      }
      labels.push_back(static_cast<std::uint8_t>(*v));
    }
    ++ds.length;
  }
  if (!have_header) throw IoError(path + ": missing header row");
  if (has_label) ds.labels = std::move(labels);
  return ds;
}

/// Writes the dataset in the LoadCsv format. `comment_lines` are emitted
/// first, each prefixed with "# ".
inline void SaveCsv(const TsDataset& ds, const std::string& path,
                    const std::vector<std::string>& comment_lines = {}) {
  ds.Validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& c : comment_lines) out << "# " << c << '\n';
  for (std::size_t c = 0; c < ds.variates; ++c) {
    if (c) out << ',';
    out << (ds.variate_names.empty() ? "v" + std::to_string(c) : ds.variate_names[c]);
  }
  if (ds.labels) out << ",label";
  out << '\n';
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t t = 0; t < ds.length; ++t) {
    for (std::size_t c = 0; c < ds.variates; ++c) {
      if (c) out << ',';
      out << ds.at(t, c);
    }
    if (ds.labels) out << ',' << static_cast<int>((*ds.labels)[t]);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

/// Per-variate z-score statistics, fit on training data only.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  /// Variates whose variance was zero; their std was forced to 1.
  std::vector<std::size_t> degenerate;
};

inline NormStats FitNormStats(const TsDataset& ds) {
  ds.Validate();
  if (ds.length == 0) throw ShapeError("cannot fit normalization on an empty dataset");
  NormStats s;
  s.mean.assign(ds.variates, 0.0);
  s.stddev.assign(ds.variates, 0.0);
  for (std::size_t t = 0; t < ds.length; ++t) {
    for (std::size_t c = 0; c < ds.variates; ++c) s.mean[c] += ds.at(t, c);
  }
  for (auto& m : s.mean) m /= static_cast<double>(ds.length);
  for (std::size_t t = 0; t < ds.length; ++t) {
    for (std::size_t c = 0; c < ds.variates; ++c) {
      const double d = ds.at(t, c) - s.mean[c];
      s.stddev[c] += d * d;
    }
  }
  for (std::size_t c = 0; c < ds.variates; ++c) {
    s.stddev[c] = std::sqrt(s.stddev[c] / static_cast<double>(ds.length));
    if (!(s.stddev[c] > 1e-12)) {
      s.stddev[c] = 1.0;
      s.degenerate.push_back(c);
    }
  }
  return s;
}

/// Z-scores every variate. Without `stats`, statistics are fit on `ds`.
inline std::pair<TsDataset, NormStats> Normalize(const TsDataset& ds,
                                                 const std::optional<NormStats>& stats = {}) {
  NormStats s = stats ? *stats : FitNormStats(ds);
  if (s.mean.size() != ds.variates || s.stddev.size() != ds.variates) {
    throw ShapeError("normalization stats have " + std::to_string(s.mean.size()) +
                     " variates, dataset has " + std::to_string(ds.variates));
  }
  TsDataset out = ds;
  for (std::size_t t = 0; t < ds.length; ++t) {
    for (std::size_t c = 0; c < ds.variates; ++c) {
      out.values[t * ds.variates + c] = (ds.at(t, c) - s.mean[c]) / s.stddev[c];
    }
  }
  return {std::move(out), std::move(s)};
}

enum class WindowMode { kTrain, kTest };

/// Fixed-length windows cut from a series, stored as [N, L, C].
struct WindowBatch {
  std::size_t window = 0;
  std::size_t variates = 0;
  std::vector<double> values;
  std::vector<std::size_t> starts;

  std::size_t count() const { return starts.size(); }

  /// Stacks the selected windows into a [n, L, C] tensor.
  template <typename T>
  Tensor<T> Gather(const std::vector<std::size_t>& indices) const {
    const std::size_t stride = window * variates;
    std::vector<T> v;
    v.reserve(indices.size() * stride);
    for (std::size_t i : indices) {
      if (i >= count()) throw ShapeError("window index out of range");
      for (std::size_t q = 0; q < stride; ++q) v.push_back(static_cast<T>(values[i * stride + q]));
    }
    return Tensor<T>({indices.size(), window, variates}, std::move(v));
  }
};

/// Non-overlapping tiling [0,L), [L,2L), ... In train mode the trailing
/// remainder is dropped; in test mode one end-aligned window covers it.
inline WindowBatch MakeWindows(const TsDataset& ds, std::size_t window, WindowMode mode) {
  if (window == 0) throw ConfigError("window length must be positive");
  if (ds.length < window) {
    throw ShapeError("series of length " + std::to_string(ds.length) +
                     " is shorter than window " + std::to_string(window));
  }
  WindowBatch b;
  b.window = window;
  b.variates = ds.variates;
  for (std::size_t s = 0; s + window <= ds.length; s += window) b.starts.push_back(s);
  if (mode == WindowMode::kTest && ds.length % window != 0) b.starts.push_back(ds.length - window);
  b.values.reserve(b.starts.size() * window * ds.variates);
  for (std::size_t s : b.starts) {
    const auto first = ds.values.begin() + static_cast<std::ptrdiff_t>(s * ds.variates);
    b.values.insert(b.values.end(), first, first + static_cast<std::ptrdiff_t>(window * ds.variates));
  }
  return b;
}

struct SyntheticOptions {
  std::size_t train_length = 5000;
  std::size_t test_length = 5000;
  std::size_t variates = 5;
  double anomaly_rate = 0.03;
  std::uint64_t seed = 0;
  /// Fundamental cycle length; every sinusoid is a harmonic of it.
  std::size_t cycle = 100;
};

enum class AnomalyKind { kSpike, kLevelShift, kCorrelationBreak };

struct InjectedAnomaly {
  AnomalyKind kind;
  std::size_t variate;
  std::size_t start;
  std::size_t length;
};

struct SyntheticData {
  TsDataset train;
  TsDataset test;
  std::vector<InjectedAnomaly> anomalies;
};

namespace detail {

struct SineComponent {
  double weight;
  double period;
  double phase;
};

struct VariateProcess {
  std::vector<SineComponent> own;
  double coupling;
  double latent_phase_offset;
};

inline double EvalVariate(const VariateProcess& v, const SineComponent& latent, double t,
                          double latent_phase_shift) {
  double x = 0.0;
  for (const auto& c : v.own) x += c.weight * std::sin(2.0 * std::numbers::pi * t / c.period + c.phase);
  x += v.coupling * std::sin(2.0 * std::numbers::pi * t / latent.period + latent.phase +
                             v.latent_phase_offset + latent_phase_shift);
  return x;
}

}  // namespace detail

/// Correlated sinusoidal series with labeled injected anomalies on the test
/// split. Each variate mixes 2-3 private sinusoids with a shared latent
/// sinusoid plus Gaussian noise at 5% of the signal's standard deviation.
/// The test split continues the training process in time and receives point
/// spikes (+-5 sigma, 1-3 steps), level shifts (+2 sigma, 20-50 steps) and
/// correlation breaks (one variate resampled independently, 20-50 steps).
inline SyntheticData GenerateSynthetic(const SyntheticOptions& opt) {
  if (opt.variates < 2) throw ConfigError("synthetic data needs at least 2 variates");
  if (opt.train_length == 0 || opt.test_length == 0) throw ConfigError("synthetic lengths must be > 0");
  if (opt.cycle < 8) throw ConfigError("synthetic cycle must be >= 8");
  if (!(opt.anomaly_rate >= 0.0 && opt.anomaly_rate < 0.2)) {
    throw ConfigError("anomaly rate must be in [0, 0.2)");
  }
  Rng rng(opt.seed);
  const std::size_t C = opt.variates;
  const double two_pi = 2.0 * std::numbers::pi;

  const double cycle = static_cast<double>(opt.cycle);
  auto harmonic = [&](std::int64_t lo, std::int64_t hi) {
    return cycle / static_cast<double>(rng.UniformInt(lo, hi));
  };
  const detail::SineComponent latent{1.0, harmonic(1, 2), rng.Uniform(0.0, two_pi)};
  std::vector<detail::VariateProcess> procs(C);
  for (auto& p : procs) {
    const auto n = static_cast<std::size_t>(rng.UniformInt(2, 3));
    for (std::size_t i = 0; i < n; ++i) {
      p.own.push_back({rng.Uniform(0.3, 1.0), harmonic(2, 8), rng.Uniform(0.0, two_pi)});
    }
    p.coupling = rng.Uniform(0.6, 1.2) * (rng.Uniform() < 0.5 ? -1.0 : 1.0);
    p.latent_phase_offset = rng.Uniform(0.0, 0.5);
  }

  const std::size_t total = opt.train_length + opt.test_length;
  std::vector<double> clean(total * C);
  for (std::size_t t = 0; t < total; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      clean[t * C + c] = detail::EvalVariate(procs[c], latent, static_cast<double>(t), 0.0);
    }
  }
  std::vector<double> sigma(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t t = 0; t < total; ++t) mean += clean[t * C + c];
    mean /= static_cast<double>(total);
    for (std::size_t t = 0; t < total; ++t) sq += std::pow(clean[t * C + c] - mean, 2);
    sigma[c] = std::sqrt(sq / static_cast<double>(total));
  }
  std::vector<double> noisy = clean;
  for (std::size_t t = 0; t < total; ++t) {
    for (std::size_t c = 0; c < C; ++c) noisy[t * C + c] += 0.05 * sigma[c] * rng.Normal();
  }

  SyntheticData data;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < C; ++c) names.push_back("v" + std::to_string(c));
  data.train.length = opt.train_length;
  data.train.variates = C;
  data.train.variate_names = names;
  data.train.values.assign(noisy.begin(), noisy.begin() + static_cast<std::ptrdiff_t>(opt.train_length * C));

  TsDataset& test = data.test;
  test.length = opt.test_length;
  test.variates = C;
  test.variate_names = names;
  test.values.assign(noisy.begin() + static_cast<std::ptrdiff_t>(opt.train_length * C), noisy.end());
  std::vector<std::uint8_t> labels(opt.test_length, 0);

  // Events keep a small gap so that every event is its own labeled segment.
  const std::size_t gap = 5;
  const auto target = static_cast<std::size_t>(std::llround(opt.anomaly_rate * static_cast<double>(opt.test_length)));
  std::size_t labeled = 0;
  std::size_t attempts = 0;
  auto is_free = [&](std::size_t start, std::size_t len) {
    const std::size_t lo = start >= gap ? start - gap : 0;
    const std::size_t hi = std::min(opt.test_length, start + len + gap);
    for (std::size_t t = lo; t < hi; ++t) {
      if (labels[t]) return false;
    }
    return true;
  };
  while (labeled < target && attempts < 100000) {
    ++attempts;
    const std::size_t remaining = target - labeled;
    auto kind = static_cast<AnomalyKind>(rng.UniformInt(0, 2));
    std::size_t len = 0;
    if (kind == AnomalyKind::kSpike || remaining < 20) {
      kind = AnomalyKind::kSpike;
      len = std::min<std::size_t>(static_cast<std::size_t>(rng.UniformInt(1, 3)), remaining);
    } else {
      len = std::min<std::size_t>(static_cast<std::size_t>(rng.UniformInt(20, 50)), remaining);
    }
    if (len + 2 * gap > opt.test_length) break;
    const auto start = static_cast<std::size_t>(
        rng.UniformInt(static_cast<std::int64_t>(gap),
                       static_cast<std::int64_t>(opt.test_length - len - gap)));
    const auto c = static_cast<std::size_t>(rng.UniformInt(0, static_cast<std::int64_t>(C) - 1));
    if (!is_free(start, len)) continue;
    switch (kind) {
      case AnomalyKind::kSpike: {
        const double sign = rng.Uniform() < 0.5 ? -1.0 : 1.0;
        for (std::size_t t = start; t < start + len; ++t) test.values[t * C + c] += sign * 5.0 * sigma[c];
        break;
      }
      case AnomalyKind::kLevelShift:
        for (std::size_t t = start; t < start + len; ++t) test.values[t * C + c] += 2.0 * sigma[c];
        break;
      case AnomalyKind::kCorrelationBreak: {
        // Same process with fresh phases, so the marginal looks normal while
        // the link to the other variates is broken.
        detail::VariateProcess resampled = procs[c];
        for (auto& comp : resampled.own) comp.phase = rng.Uniform(0.0, two_pi);
        const double shift = rng.Uniform(0.5 * std::numbers::pi, 1.5 * std::numbers::pi);
        for (std::size_t t = start; t < start + len; ++t) {
          const double tt = static_cast<double>(opt.train_length + t);
          test.values[t * C + c] = detail::EvalVariate(resampled, latent, tt, shift) +
                                   0.05 * sigma[c] * rng.Normal();
        }
        break;
      }
    }
    for (std::size_t t = start; t < start + len; ++t) labels[t] = 1;
    labeled += len;
    data.anomalies.push_back({kind, c, start, len});
  }
  test.labels = std::move(labels);
  return data;
}

}  // namespace mtscid
