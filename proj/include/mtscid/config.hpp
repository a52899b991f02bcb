#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mtscid/data.hpp"
#include "mtscid/error.hpp"
#include "mtscid/model.hpp"
#include "mtscid/scoring.hpp"
#include "mtscid/training.hpp"

namespace mtscid {

/// Everything one command-line run needs.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  /// `variates` here sizes generated data; training on a CSV takes C from the file.
  SyntheticOptions synthetic;
  std::uint64_t seed = 0;
  /// Inputs; empty means "use the file a previous stage wrote into out_dir".
  std::string train_csv;
  std::string test_csv;
  std::string checkpoint;
  std::string scores_csv;
  std::string out_dir = "mtscid_out";
  std::size_t threads = 0;
  DistanceKind td_distance = DistanceKind::kSquaredL2;

  /// Propagates the run seed and cross-field defaults, then validates.
  void Resolve() {
    train.seed = seed;
    synthetic.seed = seed;
    model.variates = synthetic.variates;
    model.Validate();
    train.Validate();
    if (!(synthetic.anomaly_rate >= 0.0 && synthetic.anomaly_rate < 0.2)) {
      throw ConfigError("anomaly_rate must be in [0, 0.2)");
    }
    if (synthetic.variates < 2) throw ConfigError("synthetic variates must be >= 2");
  }

  /// `key = value` lines that reproduce this configuration when parsed back.
  std::vector<std::string> ToLines() const;
};

namespace detail {

inline std::string_view TrimView(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename Int>
Int ParseInt(std::string_view key, std::string_view v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("invalid integer for " + std::string(key) + ": '" + std::string(v) + "'");
  }
  return out;
}

inline double ParseReal(std::string_view key, std::string_view v) {
  const auto d = ParseDouble(v);
  if (!d || !std::isfinite(*d)) {
    throw ConfigError("invalid number for " + std::string(key) + ": '" + std::string(v) + "'");
  }
  return *d;
}

inline bool ParseBool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("invalid boolean for " + std::string(key) + ": '" + std::string(v) + "'");
}

inline std::vector<std::size_t> ParseSizeList(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  for (auto cell : SplitCsv(v)) out.push_back(ParseInt<std::size_t>(key, TrimView(cell)));
  if (out.empty()) throw ConfigError("empty list for " + std::string(key));
  return out;
}

inline std::string FormatReal(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

}  // namespace detail

inline void SetRunConfigValue(RunConfig& c, std::string_view key, std::string_view v) {
  using detail::ParseBool;
  using detail::ParseInt;
  using detail::ParseReal;
  if (key == "seed") c.seed = ParseInt<std::uint64_t>(key, v);
  else if (key == "window") c.model.window = ParseInt<std::size_t>(key, v);
  else if (key == "variates") c.synthetic.variates = ParseInt<std::size_t>(key, v);
  else if (key == "latent") c.model.latent = ParseInt<std::size_t>(key, v);
  else if (key == "patch_sizes") c.model.patch_sizes = detail::ParseSizeList(key, v);
  else if (key == "kernel") c.model.kernel = ParseInt<std::size_t>(key, v);
  else if (key == "tau") c.model.tau = ParseReal(key, v);
  else if (key == "disable_taeb") c.model.disable_taeb = ParseBool(key, v);
  else if (key == "disable_iveb") c.model.disable_iveb = ParseBool(key, v);
  else if (key == "disable_patch_attention") c.model.disable_patch_attention = ParseBool(key, v);
  else if (key == "conv_as_linear") c.model.conv_as_linear = ParseBool(key, v);
  else if (key == "channel_mixing_conv") c.model.channel_mixing_conv = ParseBool(key, v);
  else if (key == "time_domain_mode") c.model.time_domain_mode = ParseBool(key, v);
  else if (key == "lr_start") c.train.lr_start = ParseReal(key, v);
  else if (key == "lr_end") c.train.lr_end = ParseReal(key, v);
  else if (key == "poly_power") c.train.poly_power = ParseReal(key, v);
  else if (key == "batch_size") c.train.batch_size = ParseInt<std::size_t>(key, v);
  else if (key == "max_epochs") c.train.max_epochs = ParseInt<std::size_t>(key, v);
  else if (key == "patience") c.train.patience = ParseInt<std::size_t>(key, v);
  else if (key == "lambda") c.train.lambda = ParseReal(key, v);
  else if (key == "val_fraction") c.train.val_fraction = ParseReal(key, v);
  else if (key == "weight_decay") c.train.weight_decay = ParseReal(key, v);
  else if (key == "beta1") c.train.beta1 = ParseReal(key, v);
  else if (key == "beta2") c.train.beta2 = ParseReal(key, v);
  else if (key == "adam_eps") c.train.adam_eps = ParseReal(key, v);
  else if (key == "train_length") c.synthetic.train_length = ParseInt<std::size_t>(key, v);
  else if (key == "test_length") c.synthetic.test_length = ParseInt<std::size_t>(key, v);
  else if (key == "anomaly_rate") c.synthetic.anomaly_rate = ParseReal(key, v);
  else if (key == "cycle") c.synthetic.cycle = ParseInt<std::size_t>(key, v);
  else if (key == "train_csv") c.train_csv = std::string(v);
  else if (key == "test_csv") c.test_csv = std::string(v);
  else if (key == "checkpoint") c.checkpoint = std::string(v);
  else if (key == "scores_csv") c.scores_csv = std::string(v);
  else if (key == "out_dir") c.out_dir = std::string(v);
  else if (key == "threads") c.threads = ParseInt<std::size_t>(key, v);
  else if (key == "td_distance") {
    if (v == "squared_l2") c.td_distance = DistanceKind::kSquaredL2;
    else if (v == "l2") c.td_distance = DistanceKind::kL2;
    else throw ConfigError("td_distance must be squared_l2 or l2");
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

/// Parses flat `key = value` text; `#` starts a comment.
inline RunConfig ParseRunConfig(std::string_view text, RunConfig base = {}) {
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::TrimView(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = detail::TrimView(line.substr(0, eq));
    const auto value = detail::TrimView(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": empty key or value");
    }
    try {
      SetRunConfigValue(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

inline RunConfig LoadRunConfig(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return ParseRunConfig(buf.str(), std::move(base));
}

inline std::vector<std::string> RunConfig::ToLines() const {
  using detail::FormatReal;
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  std::string patches;
  for (std::size_t i = 0; i < model.patch_sizes.size(); ++i) {
    patches += (i ? "," : "") + std::to_string(model.patch_sizes[i]);
  }
  std::vector<std::string> out = {
      "seed = " + std::to_string(seed),
      "window = " + std::to_string(model.window),
      "variates = " + std::to_string(model.variates),
      "latent = " + std::to_string(model.latent),
      "patch_sizes = " + patches,
      "kernel = " + std::to_string(model.kernel),
  };
  if (model.tau) out.push_back("tau = " + FormatReal(*model.tau));
  const std::vector<std::string> rest = {
      "disable_taeb = " + b(model.disable_taeb),
      "disable_iveb = " + b(model.disable_iveb),
      "disable_patch_attention = " + b(model.disable_patch_attention),
      "conv_as_linear = " + b(model.conv_as_linear),
      "channel_mixing_conv = " + b(model.channel_mixing_conv),
      "time_domain_mode = " + b(model.time_domain_mode),
      "lr_start = " + FormatReal(train.lr_start),
      "lr_end = " + FormatReal(train.lr_end),
      "poly_power = " + FormatReal(train.poly_power),
      "batch_size = " + std::to_string(train.batch_size),
      "max_epochs = " + std::to_string(train.max_epochs),
      "patience = " + std::to_string(train.patience),
      "lambda = " + FormatReal(train.lambda),
      "val_fraction = " + FormatReal(train.val_fraction),
      "weight_decay = " + FormatReal(train.weight_decay),
      "beta1 = " + FormatReal(train.beta1),
      "beta2 = " + FormatReal(train.beta2),
      "adam_eps = " + FormatReal(train.adam_eps),
      "train_length = " + std::to_string(synthetic.train_length),
      "test_length = " + std::to_string(synthetic.test_length),
      "anomaly_rate = " + FormatReal(synthetic.anomaly_rate),
      "cycle = " + std::to_string(synthetic.cycle),
      "td_distance = " + std::string(td_distance == DistanceKind::kL2 ? "l2" : "squared_l2"),
  };
  out.insert(out.end(), rest.begin(), rest.end());
  for (const auto& [key, value] : {std::pair{"train_csv", train_csv}, std::pair{"test_csv", test_csv},
                                   std::pair{"checkpoint", checkpoint}, std::pair{"scores_csv", scores_csv}}) {
    if (!value.empty()) out.push_back(std::string(key) + " = " + value);
  }
  return out;
}

}  // namespace mtscid
