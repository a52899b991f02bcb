#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mtscid/data.hpp"
#include "mtscid/error.hpp"
#include "mtscid/model.hpp"
#include "mtscid/tape.hpp"

namespace mtscid {

enum class DistanceKind { kSquaredL2, kL2 };

/// Per-timestep deviations and the combined anomaly score.
struct ScoreSeries {
  std::vector<double> td;
  std::vector<double> rd;
  std::vector<double> ascore;

  std::size_t size() const { return ascore.size(); }

  bool operator==(const ScoreSeries&) const = default;

  /// Header `t,td,rd,ascore[,label]`.
  void WriteCsv(const std::string& path, const std::optional<std::vector<std::uint8_t>>& labels = {},
                const std::vector<std::string>& comment_lines = {}) const {
    if (labels && labels->size() != size()) throw ShapeError("label length != score length");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& c : comment_lines) out << "# " << c << '\n';
    out << "t,td,rd,ascore" << (labels ? ",label" : "") << '\n';
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t t = 0; t < size(); ++t) {
      out << t << ',' << td[t] << ',' << rd[t] << ',' << ascore[t];
      if (labels) out << ',' << static_cast<int>((*labels)[t]);
      out << '\n';
    }
    if (!out) throw IoError("failed writing " + path);
  }
};

struct LabeledScores {
  ScoreSeries scores;
  std::optional<std::vector<std::uint8_t>> labels;
};

/// Reads a file written by ScoreSeries::WriteCsv.
inline LabeledScores ReadScoresCsv(const std::string& path) {
  const TsDataset raw = LoadCsv(path);
  if (raw.variates != 4 || raw.variate_names[1] != "td" || raw.variate_names[2] != "rd" ||
      raw.variate_names[3] != "ascore") {
    throw IoError(path + ": expected header t,td,rd,ascore[,label]");
  }
  LabeledScores out;
  for (std::size_t t = 0; t < raw.length; ++t) {
    out.scores.td.push_back(raw.at(t, 1));
    out.scores.rd.push_back(raw.at(t, 2));
    out.scores.ascore.push_back(raw.at(t, 3));
  }
  out.labels = raw.labels;
  return out;
}

/// TD_t = distance between x_t and x_hat_t over the C variates; both [L, C].
inline std::vector<double> TemporalDeviation(std::span<const double> x, std::span<const double> x_hat,
                                             std::size_t variates,
                                             DistanceKind kind = DistanceKind::kSquaredL2) {
  if (x.size() != x_hat.size() || variates == 0 || x.size() % variates != 0) {
    throw ShapeError("temporal deviation: shape mismatch");
  }
  const std::size_t len = x.size() / variates;
  std::vector<double> td(len, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    double acc = 0.0;
    for (std::size_t c = 0; c < variates; ++c) {
      const double d = x[t * variates + c] - x_hat[t * variates + c];
      acc += d * d;
    }
    td[t] = kind == DistanceKind::kL2 ? std::sqrt(acc) : acc;
  }
  return td;
}

/// RD_t = min over prototype rows s of ||o_t - M_s||_2. o: [L, C], bank: [S, C].
inline std::vector<double> RelationshipDeviation(std::span<const double> o, std::span<const double> bank,
                                                 std::size_t variates) {
  if (variates == 0 || o.size() % variates != 0 || bank.size() % variates != 0 || bank.empty()) {
    throw ShapeError("relationship deviation: shape mismatch");
  }
  const std::size_t len = o.size() / variates;
  const std::size_t rows = bank.size() / variates;
  std::vector<double> rd(len);
  for (std::size_t t = 0; t < len; ++t) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < rows; ++s) {
      double acc = 0.0;
      for (std::size_t c = 0; c < variates; ++c) {
        const double d = o[t * variates + c] - bank[s * variates + c];
        acc += d * d;
      }
      best = std::min(best, acc);
    }
    rd[t] = std::sqrt(best);
  }
  return rd;
}

/// softmax(rd) over the window's timesteps, multiplied elementwise by td.
inline std::vector<double> AnomalyScore(std::span<const double> td, std::span<const double> rd) {
  if (td.size() != rd.size()) throw ShapeError("anomaly score: td/rd length mismatch");
  if (td.empty()) return {};
  const double mx = *std::max_element(rd.begin(), rd.end());
  std::vector<double> out(td.size());
  double denom = 0.0;
  for (std::size_t t = 0; t < rd.size(); ++t) {
    out[t] = std::exp(rd[t] - mx);
    denom += out[t];
  }
  for (std::size_t t = 0; t < td.size(); ++t) out[t] = out[t] / denom * td[t];
  return out;
}

struct ScoringOptions {
  DistanceKind td_distance = DistanceKind::kSquaredL2;
  /// 0 means MTSCID_THREADS if set, otherwise hardware concurrency.
  std::size_t threads = 0;
};

inline std::size_t ResolveThreads(std::size_t requested) {
  std::size_t n = requested;
  if (n == 0) {
    if (const char* env = std::getenv("MTSCID_THREADS")) n = static_cast<std::size_t>(std::strtoul(env, nullptr, 10));
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

struct WindowScores {
  std::vector<double> td, rd, ascore;
};

/// Scores one [L, C] window (given as a [1, L, C] tensor).
template <typename T>
WindowScores ScoreWindow(const Model<T>& model, const Tensor<T>& x, DistanceKind td_distance) {
  const auto& cfg = model.config();
  Tape<T> tape(false);
  const auto out = model.Forward(tape, x);
  const std::vector<double> xv(x.values().begin(), x.values().end());
  WindowScores s;
  if (out.x_hat.defined()) {
    const std::vector<double> xh(out.x_hat.values().begin(), out.x_hat.values().end());
    s.td = TemporalDeviation(xv, xh, cfg.variates, td_distance);
  } else {
    s.td.assign(cfg.window, 0.0);
  }
  if (out.o.defined()) {
    const std::vector<double> ov(out.o.values().begin(), out.o.values().end());
    const auto bank = model.prototypes().matrix.values();
    const std::vector<double> bv(bank.begin(), bank.end());
    s.rd = RelationshipDeviation(ov, bv, cfg.variates);
  } else {
    s.rd.assign(cfg.window, 0.0);
  }
  if (cfg.disable_iveb) {
    s.ascore = s.td;
  } else if (cfg.disable_taeb) {
    s.ascore = AnomalyScore(s.rd, s.rd);
  } else {
    s.ascore = AnomalyScore(s.td, s.rd);
  }
  return s;
}

/// Scores every timestep of a (normalized) series. Windows tile the series
/// left to right; a trailing end-aligned window fills only the timesteps not
/// already covered.
template <typename T>
ScoreSeries ScoreDataset(const Model<T>& model, const TsDataset& series, const ScoringOptions& opt = {}) {
  const auto& cfg = model.config();
  if (series.variates != cfg.variates) throw ShapeError("series variate count != model C");
  const WindowBatch windows = MakeWindows(series, cfg.window, WindowMode::kTest);
  std::vector<WindowScores> per(windows.count());
  const std::size_t threads = std::min(ResolveThreads(opt.threads), windows.count());
  auto work = [&](std::size_t tid) {
    for (std::size_t i = tid; i < windows.count(); i += threads) {
      per[i] = ScoreWindow(model, windows.Gather<T>({i}), opt.td_distance);
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    pool.clear();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  ScoreSeries out;
  out.td.assign(series.length, 0.0);
  out.rd.assign(series.length, 0.0);
  out.ascore.assign(series.length, 0.0);
  std::vector<bool> covered(series.length, false);
  for (std::size_t i = 0; i < windows.count(); ++i) {
    for (std::size_t j = 0; j < cfg.window; ++j) {
      const std::size_t t = windows.starts[i] + j;
      if (covered[t]) continue;
      covered[t] = true;
      out.td[t] = per[i].td[j];
      out.rd[t] = per[i].rd[j];
      out.ascore[t] = per[i].ascore[j];
    }
  }
  return out;
}

}  // namespace mtscid
