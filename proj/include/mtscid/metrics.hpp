#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mtscid/error.hpp"

namespace mtscid {

/// Expands every ground-truth anomaly segment that contains at least one
/// detection to the full segment. Predictions outside segments are kept.
inline std::vector<std::uint8_t> PointAdjust(std::span<const std::uint8_t> pred,
                                             std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw ShapeError("point_adjust: length mismatch");
  std::vector<std::uint8_t> out(pred.begin(), pred.end());
  std::size_t t = 0;
  while (t < gt.size()) {
    if (!gt[t]) {
      ++t;
      continue;
    }
    std::size_t end = t;
    bool hit = false;
    while (end < gt.size() && gt[end]) hit |= pred[end++] != 0;
    if (hit) std::fill(out.begin() + static_cast<std::ptrdiff_t>(t), out.begin() + static_cast<std::ptrdiff_t>(end), 1);
    t = end;
  }
  return out;
}

struct PrfCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline Prf PrfFromCounts(const PrfCounts& c) {
  Prf r;
  r.precision = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  r.recall = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

/// Pointwise precision / recall / F1; 0 wherever a denominator is 0.
inline Prf ComputePrf(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw ShapeError("prf: length mismatch");
  PrfCounts c;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (pred[t] && gt[t]) ++c.tp;
    else if (pred[t]) ++c.fp;
    else if (gt[t]) ++c.fn;
  }
  return PrfFromCounts(c);
}

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double threshold = 0.0;
  std::vector<std::uint8_t> adjusted_predictions;

  std::string ToKeyValue() const {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10);
    os << "precision = " << precision << '\n'
       << "recall = " << recall << '\n'
       << "f1 = " << f1 << '\n'
       << "threshold = " << threshold << '\n';
    return os.str();
  }

  static std::string CsvHeader() { return "precision,recall,f1,threshold"; }

  std::string ToCsvRow() const {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10);
    os << precision << ',' << recall << ',' << f1 << ',' << threshold;
    return os.str();
  }
};

/// Candidate thresholds: every distinct score when there are at most
/// `exact_limit` of them, otherwise `quantiles` evenly spaced order
/// statistics. Returned ascending and unique.
inline std::vector<double> ThresholdCandidates(std::span<const double> scores,
                                               std::size_t exact_limit = 10000,
                                               std::size_t quantiles = 1000) {
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (sorted.size() <= exact_limit) return sorted;
  std::vector<double> all(scores.begin(), scores.end());
  std::sort(all.begin(), all.end());
  std::vector<double> out;
  for (std::size_t i = 0; i < quantiles; ++i) {
    const std::size_t pos = i * (all.size() - 1) / (quantiles - 1);
    out.push_back(all[pos]);
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Best point-adjusted F1 over a threshold sweep with pred = (score >= theta).
/// Ties resolve to the lowest threshold.
inline EvalReport BestF1(std::span<const double> scores, std::span<const std::uint8_t> gt) {
  if (scores.size() != gt.size()) throw ShapeError("best_f1: length mismatch");
  const bool any_pos = std::any_of(gt.begin(), gt.end(), [](auto v) { return v != 0; });
  const bool any_neg = std::any_of(gt.begin(), gt.end(), [](auto v) { return v == 0; });
  if (!any_pos || !any_neg) throw ConfigError("best_f1: ground truth must contain both classes");

  // A segment is fully detected exactly when its maximum score clears the
  // threshold; normal points count individually.
  std::vector<std::pair<double, std::size_t>> segments;  // (max score, length)
  std::vector<double> normal;
  std::size_t positives = 0;
  for (std::size_t t = 0; t < gt.size();) {
    if (!gt[t]) {
      normal.push_back(scores[t]);
      ++t;
      continue;
    }
    double mx = -std::numeric_limits<double>::infinity();
    std::size_t len = 0;
    while (t < gt.size() && gt[t]) {
      mx = std::max(mx, scores[t]);
      ++len;
      ++t;
    }
    segments.emplace_back(mx, len);
    positives += len;
  }
  std::sort(segments.begin(), segments.end());
  std::sort(normal.begin(), normal.end());

  const auto candidates = ThresholdCandidates(scores);
  EvalReport best;
  best.f1 = -1.0;
  std::size_t seg_pos = 0;       // segments below the current threshold
  std::size_t below_tp = 0;      // their total length
  std::size_t normal_pos = 0;    // normal scores below the current threshold
  for (double theta : candidates) {
    while (seg_pos < segments.size() && segments[seg_pos].first < theta) below_tp += segments[seg_pos++].second;
    while (normal_pos < normal.size() && normal[normal_pos] < theta) ++normal_pos;
    PrfCounts c;
    c.tp = positives - below_tp;
    c.fp = normal.size() - normal_pos;
    c.fn = below_tp;
    const Prf r = PrfFromCounts(c);
    if (r.f1 > best.f1) {
      best.precision = r.precision;
      best.recall = r.recall;
      best.f1 = r.f1;
      best.threshold = theta;
    }
  }
  std::vector<std::uint8_t> pred(scores.size());
  for (std::size_t t = 0; t < scores.size(); ++t) pred[t] = scores[t] >= best.threshold ? 1 : 0;
  best.adjusted_predictions = PointAdjust(pred, gt);
  return best;
}

inline void WriteEvalReport(const EvalReport& r, const std::string& text_path, const std::string& csv_path,
                            const std::vector<std::string>& comment_lines = {}) {
  {
    std::ofstream out(text_path);
    if (!out) throw IoError("cannot write " + text_path);
    for (const auto& c : comment_lines) out << "# " << c << '\n';
    out << r.ToKeyValue();
  }
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot write " + csv_path);
  for (const auto& c : comment_lines) out << "# " << c << '\n';
  out << EvalReport::CsvHeader() << '\n' << r.ToCsvRow() << '\n';
}

}  // namespace mtscid
