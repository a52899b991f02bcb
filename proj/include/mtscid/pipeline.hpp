#pragma once

#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mtscid/checkpoint.hpp"
#include "mtscid/config.hpp"
#include "mtscid/data.hpp"
#include "mtscid/error.hpp"
#include "mtscid/metrics.hpp"
#include "mtscid/model.hpp"
#include "mtscid/scoring.hpp"
#include "mtscid/training.hpp"

namespace mtscid {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitMissingInput = 3,
  kExitDivergence = 4,
};

struct TrainedModel {
  Model<float> model;
  NormStats norm;
  TrainHistory history;
};

/// Normalizes the raw training series, sizes the model to it and trains.
inline TrainedModel TrainOnSeries(const RunConfig& cfg, const TsDataset& raw_train,
                                  const EpochCallback& on_epoch = {}) {
  auto [train, norm] = Normalize(raw_train);
  ModelConfig mc = cfg.model;
  mc.variates = train.variates;
  Model<float> model(mc, cfg.seed);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const WindowBatch windows = MakeWindows(train, mc.window, WindowMode::kTrain);
  TrainHistory history = Train(model, windows, tc, on_epoch);
  return {std::move(model), std::move(norm), std::move(history)};
}

inline ScoreSeries ScoreSeriesWith(const Model<float>& model, const NormStats& norm, const TsDataset& raw_test,
                                   const RunConfig& cfg) {
  auto [test, unused] = Normalize(raw_test, norm);
  ScoringOptions opt;
  opt.td_distance = cfg.td_distance;
  opt.threads = cfg.threads;
  return ScoreDataset(model, test, opt);
}

inline EvalReport EvaluateScores(const ScoreSeries& scores, const std::vector<std::uint8_t>& labels) {
  return BestF1(scores.ascore, labels);
}

/// Output locations under out_dir, and inputs defaulting to them.
struct RunPaths {
  std::filesystem::path out;
  std::string train_csv, test_csv, checkpoint, history, scores, eval_txt, eval_csv, sidecar;

  explicit RunPaths(const RunConfig& cfg) : out(cfg.out_dir) {
    auto at = [&](const char* name) { return (out / name).string(); };
    train_csv = cfg.train_csv.empty() ? at("train.csv") : cfg.train_csv;
    test_csv = cfg.test_csv.empty() ? at("test.csv") : cfg.test_csv;
    checkpoint = cfg.checkpoint.empty() ? at("model.ckpt") : cfg.checkpoint;
    history = at("history.csv");
    scores = cfg.scores_csv.empty() ? at("scores.csv") : cfg.scores_csv;
    eval_txt = at("eval.txt");
    eval_csv = at("eval.csv");
    sidecar = at("run_config.txt");
  }
};

namespace detail {

inline std::vector<std::string> ConfigHeader(const RunConfig& cfg, const std::string& command) {
  std::vector<std::string> lines = {"mtscid " + command + " resolved config:"};
  for (const auto& l : cfg.ToLines()) lines.push_back(l);
  return lines;
}

inline void RequireInput(const std::string& path, const char* what) {
  if (!std::filesystem::exists(path)) throw IoError(std::string("missing ") + what + ": " + path);
}

inline void WriteSidecar(const RunConfig& cfg, const RunPaths& paths, const std::string& command) {
  std::ofstream out(paths.sidecar);
  if (!out) throw IoError("cannot write " + paths.sidecar);
  out << "# mtscid " << command << "\n";
  for (const auto& l : cfg.ToLines()) out << l << '\n';
}

}  // namespace detail

inline void GenDataCommand(const RunConfig& cfg, std::ostream& log) {
  const RunPaths paths(cfg);
  const auto synth = GenerateSynthetic(cfg.synthetic);
  const auto header = detail::ConfigHeader(cfg, "gen-data");
  SaveCsv(synth.train, paths.train_csv, header);
  SaveCsv(synth.test, paths.test_csv, header);
  log << "wrote " << paths.train_csv << " and " << paths.test_csv << " (" << synth.anomalies.size()
      << " injected anomalies)\n";
}

inline void TrainCommand(RunConfig& cfg, std::ostream& log) {
  const RunPaths paths(cfg);
  detail::RequireInput(paths.train_csv, "training data");
  const TsDataset raw = LoadCsv(paths.train_csv);
  cfg.synthetic.variates = raw.variates;
  cfg.model.variates = raw.variates;
  auto trained = TrainOnSeries(cfg, raw, [&](const EpochRecord& e) {
    log << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss << " lr " << e.lr
        << (e.early_stop ? " (early stop)" : "") << '\n';
  });
  SaveCheckpoint(paths.checkpoint, trained.model.config(), trained.model.state(), trained.norm);
  trained.history.WriteCsv(paths.history, detail::ConfigHeader(cfg, "train"));
  log << "best epoch " << trained.history.best_epoch << ", wrote " << paths.checkpoint << '\n';
}

inline void ScoreCommand(const RunConfig& cfg, std::ostream& log) {
  const RunPaths paths(cfg);
  detail::RequireInput(paths.checkpoint, "checkpoint");
  detail::RequireInput(paths.test_csv, "test data");
  const auto ck = LoadCheckpoint<float>(paths.checkpoint);
  if (!ck.norm) throw IoError(paths.checkpoint + ": no normalization statistics stored");
  const Model<float> model(ck.config, ck.state);
  const TsDataset raw = LoadCsv(paths.test_csv);
  const ScoreSeries scores = ScoreSeriesWith(model, *ck.norm, raw, cfg);
  RunConfig resolved = cfg;
  resolved.model = ck.config;
  resolved.synthetic.variates = ck.config.variates;
  scores.WriteCsv(paths.scores, raw.labels, detail::ConfigHeader(resolved, "score"));
  log << "scored " << scores.size() << " timesteps, wrote " << paths.scores << '\n';
}

inline EvalReport EvalCommand(const RunConfig& cfg, std::ostream& log) {
  const RunPaths paths(cfg);
  detail::RequireInput(paths.scores, "score file");
  const auto labeled = ReadScoresCsv(paths.scores);
  if (!labeled.labels) throw IoError(paths.scores + ": no label column to evaluate against");
  const EvalReport report = EvaluateScores(labeled.scores, *labeled.labels);
  WriteEvalReport(report, paths.eval_txt, paths.eval_csv, detail::ConfigHeader(cfg, "eval"));
  log << report.ToKeyValue();
  return report;
}

/// Runs one command and maps failures to exit codes.
inline int RunCommand(const std::string& command, RunConfig cfg, std::ostream& log = std::cout,
                      std::ostream& err = std::cerr) {
  try {
    cfg.Resolve();
    const bool known = command == "gen-data" || command == "train" || command == "score" ||
                       command == "eval" || command == "run-all";
    if (!known) throw ConfigError("unknown command '" + command + "'");
    std::filesystem::create_directories(cfg.out_dir);
    const RunPaths paths(cfg);
    if (command == "gen-data" || (command == "run-all" && cfg.train_csv.empty())) GenDataCommand(cfg, log);
    if (command == "train" || command == "run-all") TrainCommand(cfg, log);
    if (command == "score" || command == "run-all") ScoreCommand(cfg, log);
    if (command == "eval" || command == "run-all") EvalCommand(cfg, log);
    detail::WriteSidecar(cfg, paths, command);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitMissingInput;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace mtscid
