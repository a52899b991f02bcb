// Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Tolerances and benchmark settings are pinned below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "mtscid/mtscid.hpp"
#include "test_support.hpp"

namespace {

using namespace mtscid;
using Clock = std::chrono::steady_clock;

constexpr double kGradRelTol = 1e-4;
constexpr double kGradSuiteSeconds = 60.0;
constexpr double kSpectralTol = 1e-5;
constexpr double kPrototypeTol = 4e-15;  // a few ulps of a 64-bit cosine
constexpr double kDetectF1 = 0.90;
constexpr double kWallSeconds = 300.0;
constexpr double kAblationSlack = 0.02;
constexpr double kLambdaF1 = 0.80;
constexpr double kLossRatio = 0.5;
const std::vector<std::uint64_t> kSeeds = {1, 2, 3};
const std::vector<double> kLambdas = {1e-3, 1e-1, 1e2};

int failures = 0;

void Report(int id, bool pass, const std::string& what) {
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", what.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string Fmt(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

double Seconds(Clock::time_point since) { return std::chrono::duration<double>(Clock::now() - since).count(); }

// Benchmark: d=32, L=100, p=[10,20], k=5, lambda=0.1, at most 10 epochs.
// Batch size is 1 because 5,000 steps in non-overlapping windows of 100
// leave 40 training windows.
RunConfig Benchmark(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.model.window = 100;
  c.model.latent = 32;
  c.model.patch_sizes = {10, 20};
  c.model.kernel = 5;
  c.train.lambda = 0.1;
  c.train.max_epochs = 10;
  c.train.batch_size = 1;
  c.synthetic.train_length = 5000;
  c.synthetic.test_length = 5000;
  c.synthetic.variates = 5;
  c.synthetic.anomaly_rate = 0.03;
  c.Resolve();
  return c;
}

struct RunResult {
  bool ok = false;
  std::string error;
  double f1 = 0.0;
  double seconds = 0.0;
  bool params_finite = true;
  TrainHistory history;
  std::optional<TrainedModel> trained;
  ScoreSeries scores;
  SyntheticData data;
};

RunResult RunBenchmark(const RunConfig& cfg) {
  RunResult r;
  const auto start = Clock::now();
  try {
    r.data = GenerateSynthetic(cfg.synthetic);
    auto [train, norm] = Normalize(r.data.train);
    Model<float> model(cfg.model, cfg.seed);
    const auto windows = MakeWindows(train, cfg.model.window, WindowMode::kTrain);
    r.history = Train(model, windows, cfg.train, [&](const EpochRecord&) {
      for (const auto& p : model.Parameters()) r.params_finite &= p.tensor.AllFinite();
    });
    for (const auto& p : model.Parameters()) r.params_finite &= p.tensor.AllFinite();
    r.scores = ScoreSeriesWith(model, norm, r.data.test, cfg);
    for (double v : r.scores.ascore) r.params_finite &= std::isfinite(v);
    r.f1 = EvaluateScores(r.scores, *r.data.test.labels).f1;
    r.trained = TrainedModel{std::move(model), std::move(norm), r.history};
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.seconds = Seconds(start);
  return r;
}

double Mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------

void GradientCriterion() {
  using testing::GradCheck;
  using testing::RandomTensor;
  using testing::WeightedSum;
  using Fn = std::function<Tensor<double>(Tape<double>&)>;
  const auto start = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  auto check = [&](const std::string& name, std::vector<Tensor<double>> in, const Fn& fn) {
    const double e = GradCheck(std::move(in), fn);
    ++checks;
    if (!(e <= worst)) {
      worst = e;
      worst_name = name;
    }
  };

  auto a = RandomTensor({3, 4}, 1), b = RandomTensor({4}, 2), col = RandomTensor({3, 1}, 3);
  auto pos = RandomTensor({3, 4}, 4, 0.5, 2.0);
  auto cube = RandomTensor({2, 6, 3}, 5);
  check("add", {a, b}, [&](Tape<double>& t) { return WeightedSum(t, t.Add(a, b)); });
  check("sub", {a, b}, [&](Tape<double>& t) { return WeightedSum(t, t.Sub(a, b)); });
  check("mul", {a, col}, [&](Tape<double>& t) { return WeightedSum(t, t.Mul(a, col)); });
  check("scale", {a}, [&](Tape<double>& t) { return WeightedSum(t, t.Scale(a, 1.3)); });
  check("add_scalar", {a}, [&](Tape<double>& t) { return WeightedSum(t, t.AddScalar(a, -0.4)); });
  check("square", {a}, [&](Tape<double>& t) { return WeightedSum(t, t.Square(a)); });
  check("log", {pos}, [&](Tape<double>& t) { return WeightedSum(t, t.Log(pos)); });
  check("sum", {cube}, [&](Tape<double>& t) { return t.Square(t.Sum(cube)); });
  check("mean", {cube}, [&](Tape<double>& t) { return t.Square(t.Mean(cube)); });
  check("sq_l2", {cube}, [&](Tape<double>& t) { return t.SqL2(cube); });
  for (int axis : {0, 1, -1}) {
    check("sum_axis", {cube}, [&](Tape<double>& t) { return WeightedSum(t, t.Sum(cube, axis)); });
    check("mean_axis", {cube}, [&](Tape<double>& t) { return WeightedSum(t, t.Mean(cube, axis)); });
    check("sq_l2_axis", {cube}, [&](Tape<double>& t) { return WeightedSum(t, t.SqL2(cube, axis)); });
    check("softmax", {cube}, [&](Tape<double>& t) { return WeightedSum(t, t.Softmax(cube, axis)); });
  }
  auto m1 = RandomTensor({2, 3, 4}, 6), m2 = RandomTensor({4, 5}, 7);
  check("matmul", {m1, m2}, [&](Tape<double>& t) { return WeightedSum(t, t.MatMul(m1, m2)); });
  check("permute", {cube}, [&](Tape<double>& t) { return WeightedSum(t, t.Permute(cube, {2, 0, 1})); });
  check("transpose", {cube}, [&](Tape<double>& t) { return WeightedSum(t, t.Transpose(cube)); });
  check("reshape", {cube}, [&](Tape<double>& t) { return WeightedSum(t, t.Reshape(cube, {4, 9})); });
  check("patch", {cube}, [&](Tape<double>& t) { return WeightedSum(t, t.Patch(cube, 3)); });
  auto patched = RandomTensor({6, 2, 3}, 8);
  check("unpatch", {patched}, [&](Tape<double>& t) { return WeightedSum(t, t.Unpatch(patched, 2, 3)); });
  auto ln_scale = RandomTensor({4}, 9, 0.5, 1.5), ln_shift = RandomTensor({4}, 10);
  check("layer_norm", {a, ln_scale, ln_shift},
        [&](Tape<double>& t) { return WeightedSum(t, t.LayerNorm(a, ln_scale, ln_shift)); });
  auto seq = RandomTensor({2, 7, 3}, 11), dk = RandomTensor({3, 5}, 12), db = RandomTensor({3}, 13);
  auto ck = RandomTensor({2, 3, 3}, 14), cb = RandomTensor({2}, 15);
  check("conv_depthwise", {seq, dk, db},
        [&](Tape<double>& t) { return WeightedSum(t, t.Conv1dDepthwise(seq, dk, db)); });
  check("conv", {seq, ck, cb}, [&](Tape<double>& t) { return WeightedSum(t, t.Conv1d(seq, ck, cb)); });
  const Dft<double> dft(6);
  auto last = RandomTensor({2, 3, 6}, 16), re = RandomTensor({2, 4, 3}, 17), im = RandomTensor({2, 4, 3}, 18);
  auto re_l = RandomTensor({2, 3, 4}, 19), im_l = RandomTensor({2, 3, 4}, 20);
  check("dft_rows", {cube}, [&](Tape<double>& t) {
    const auto s = dft.Forward(t, cube, SpectralAxis::kRows);
    return t.Add(WeightedSum(t, s.real, 1), WeightedSum(t, s.imag, 2));
  });
  check("dft_last", {last}, [&](Tape<double>& t) {
    const auto s = dft.Forward(t, last, SpectralAxis::kLast);
    return t.Add(WeightedSum(t, s.real, 3), WeightedSum(t, s.imag, 4));
  });
  check("idft_rows", {re, im},
        [&](Tape<double>& t) { return WeightedSum(t, dft.Inverse(t, {re, im}, SpectralAxis::kRows)); });
  check("idft_last", {re_l, im_l},
        [&](Tape<double>& t) { return WeightedSum(t, dft.Inverse(t, {re_l, im_l}, SpectralAxis::kLast)); });

  // Full model loss, tiny configuration L=8, C=2, d=4, p=[4].
  ModelConfig tiny;
  tiny.window = 8;
  tiny.variates = 2;
  tiny.latent = 4;
  tiny.patch_sizes = {4};
  tiny.kernel = 3;
  Model<double> model(tiny, 21);
  Rng jitter(22);
  std::vector<Tensor<double>> params;
  for (auto& p : model.Parameters()) {
    for (auto& v : p.tensor.mutable_values()) v += jitter.Uniform(-0.3, 0.3);
    params.push_back(p.tensor);
  }
  const auto x = RandomTensor({2, 8, 2}, 23, -1.5, 1.5, false);
  check("model_loss", params,
        [&](Tape<double>& t) { return ComputeLosses(t, x, model.Forward(t, x), 0.1).total; });

  const double secs = Seconds(start);
  Report(1, worst < kGradRelTol && secs < kGradSuiteSeconds,
         Fmt("%zu gradient checks, worst relative error %.2e (%s) < %.0e; suite %.2fs < %.0fs", checks, worst,
             worst_name.c_str(), kGradRelTol, secs, kGradSuiteSeconds));
}

void SpectralCriterion() {
  double round_trip = 0.0, constant = 0.0, tone = 0.0;
  for (std::size_t L : {8u, 100u, 101u}) {
    const Dft<float> dft(L);
    Tape<float> tape(false);
    const auto x = CastTensor<float>(testing::RandomTensor({3, L, 4}, L, -2, 2, false));
    const auto back = dft.Inverse(tape, dft.Forward(tape, x, SpectralAxis::kRows), SpectralAxis::kRows);
    for (std::size_t i = 0; i < x.numel(); ++i) round_trip = std::max(round_trip, std::abs(double(back[i]) - x[i]));

    const auto c = dft.Forward(tape, Tensor<float>::Full({1, L, 1}, 0.75f), SpectralAxis::kRows);
    for (std::size_t k = 0; k < c.real.numel(); ++k) {
      const double want = k == 0 ? 0.75 * static_cast<double>(L) : 0.0;
      constant = std::max({constant, std::abs(c.real[k] - want), std::abs(double(c.imag[k]))});
    }

    // Single tone at bin 3 against direct summation in extended precision.
    std::vector<float> sig(L);
    for (std::size_t t = 0; t < L; ++t) {
      sig[t] = static_cast<float>(std::cos(2.0 * std::numbers::pi * 3.0 * static_cast<double>(t) / static_cast<double>(L) + 0.4));
    }
    const auto s = dft.Forward(tape, Tensor<float>({1, L, 1}, sig), SpectralAxis::kRows);
    for (std::size_t k = 0; k < s.real.numel(); ++k) {
      long double re = 0, im = 0;
      for (std::size_t t = 0; t < L; ++t) {
        const long double ang = 2.0L * std::numbers::pi_v<long double> * static_cast<long double>((k * t) % L) /
                                static_cast<long double>(L);
        re += sig[t] * std::cos(ang);
        im -= sig[t] * std::sin(ang);
      }
      // Relative to the signal length so that tolerance is per-sample float error.
      const double scale = static_cast<double>(L);
      tone = std::max({tone, std::abs(double(s.real[k]) - double(re)) / scale,
                       std::abs(double(s.imag[k]) - double(im)) / scale});
    }
  }
  Report(2, round_trip < kSpectralTol && constant / 100.0 < kSpectralTol && tone < kSpectralTol,
         Fmt("32-bit idft(dft(x)) max error %.2e; constant spectrum error %.2e (per sample %.2e); "
             "single tone vs direct sum %.2e per sample; tolerance %.0e",
             round_trip, constant, constant / 100.0, tone, kSpectralTol));
}

void PrototypeCriterion() {
  double worst = 0.0;
  bool ones = true;
  for (auto [L, C] : {std::pair<std::size_t, std::size_t>{4, 2}, {100, 25}}) {
    const auto bank = BuildPrototypes<double>(L, C);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < C; ++j) {
        const long double ang = 2.0L * std::numbers::pi_v<long double> * static_cast<long double>((i * j) % L) /
                                static_cast<long double>(L);
        worst = std::max(worst, std::abs(bank.matrix.at({i, j}) - static_cast<double>(std::cos(ang))));
        if ((i == 0 || j == 0) && bank.matrix.at({i, j}) != 1.0) ones = false;
      }
    }
  }
  Report(3, worst <= kPrototypeTol && ones,
         Fmt("max |M_ij - cos(2 pi i j / L)| = %.2e <= %.0e over (4,2) and (100,25); index-0 rows/columns exactly 1: %s",
             worst, kPrototypeTol, ones ? "yes" : "no"));
}

double BruteForceF1(const std::vector<double>& scores, const std::vector<std::uint8_t>& gt) {
  double best = -1.0;
  for (double theta : std::set<double>(scores.begin(), scores.end())) {
    std::vector<std::uint8_t> adj(scores.size());
    for (std::size_t t = 0; t < scores.size(); ++t) adj[t] = scores[t] >= theta;
    for (std::size_t t = 0; t < gt.size();) {
      if (!gt[t]) {
        ++t;
        continue;
      }
      std::size_t e = t;
      bool hit = false;
      while (e < gt.size() && gt[e]) hit |= adj[e++] != 0;
      for (std::size_t u = t; hit && u < e; ++u) adj[u] = 1;
      t = e;
    }
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t t = 0; t < gt.size(); ++t) {
      tp += adj[t] && gt[t];
      fp += adj[t] && !gt[t];
      fn += !adj[t] && gt[t];
    }
    const double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    const double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    best = std::max(best, p + r > 0 ? 2 * p * r / (p + r) : 0.0);
  }
  return best;
}

void MetricCriterion() {
  Rng rng(4242);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t T = 200;
    std::vector<std::uint8_t> gt(T, 0);
    for (int s = 0; s < static_cast<int>(rng.UniformInt(1, 5)); ++s) {
      const auto start = static_cast<std::size_t>(rng.UniformInt(0, T - 1));
      const auto len = static_cast<std::size_t>(rng.UniformInt(1, 25));
      for (std::size_t t = start; t < std::min(T, start + len); ++t) gt[t] = 1;
    }
    gt[0] = 0;
    std::vector<double> scores(T);
    for (std::size_t t = 0; t < T; ++t) {
      scores[t] = rng.Uniform() + (gt[t] ? rng.Uniform(0.0, 0.5) : 0.0);
      if (trial % 4 == 0) scores[t] = std::round(scores[t] * 10.0) / 10.0;
    }
    if (BestF1(scores, gt).f1 != BruteForceF1(scores, gt)) ++mismatches;
  }
  Report(4, mismatches == 0, Fmt("best_f1 vs exhaustive threshold sweep, 1000 random cases (T=200): %zu mismatches", mismatches));
}

}  // namespace

int main() {
  const auto total_start = Clock::now();
  GradientCriterion();
  SpectralCriterion();
  PrototypeCriterion();
  MetricCriterion();

  // Full model and both single-branch variants on every seed.
  struct Variant {
    const char* name;
    bool disable_taeb, disable_iveb;
  };
  const std::vector<Variant> variants = {{"full", false, false}, {"temporal only", false, true},
                                         {"inter-variate only", true, false}};
  std::vector<std::vector<RunResult>> runs(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    for (auto seed : kSeeds) {
      auto cfg = Benchmark(seed);
      cfg.model.disable_taeb = variants[v].disable_taeb;
      cfg.model.disable_iveb = variants[v].disable_iveb;
      runs[v].push_back(RunBenchmark(cfg));
      const auto& r = runs[v].back();
      std::printf("  run %-18s seed %llu: %s f1 %.4f, %zu epochs, %.1fs\n", variants[v].name,
                  static_cast<unsigned long long>(seed), r.ok ? "ok" : r.error.c_str(), r.f1, r.history.epochs.size(),
                  r.seconds);
    }
  }
  auto f1s = [](const std::vector<RunResult>& rs) {
    std::vector<double> out;
    for (const auto& r : rs) out.push_back(r.ok ? r.f1 : 0.0);
    return out;
  };

  // 5: detection quality and wall time.
  const auto& full = runs[0];
  bool all_ok = true;
  double slowest = 0.0;
  std::string per_seed;
  for (std::size_t i = 0; i < full.size(); ++i) {
    all_ok &= full[i].ok;
    slowest = std::max(slowest, full[i].seconds);
    per_seed += Fmt("%s%.4f", i ? ", " : "", full[i].f1);
  }
  const double full_mean = Mean(f1s(full));
  Report(5, all_ok && full_mean >= kDetectF1 && slowest < kWallSeconds,
         Fmt("mean PA best-F1 over seeds 1-3 = %.4f (%s) >= %.2f; slowest run %.1fs < %.0fs", full_mean,
             per_seed.c_str(), kDetectF1, slowest, kWallSeconds));

  // 6: ablation table.
  std::printf("  variant             seed1   seed2   seed3   mean\n");
  bool trend = true;
  std::vector<double> means;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const auto f = f1s(runs[v]);
    means.push_back(Mean(f));
    std::printf("  %-18s  %.4f  %.4f  %.4f  %.4f\n", variants[v].name, f[0], f[1], f[2], means.back());
  }
  for (std::size_t v = 1; v < variants.size(); ++v) trend &= means[0] >= means[v] - kAblationSlack;
  Report(6, trend,
         Fmt("full %.4f >= temporal-only %.4f - %.2f and >= inter-variate-only %.4f - %.2f", means[0], means[1],
             kAblationSlack, means[2], kAblationSlack));

  // 7: loss decrease, finiteness, determinism.
  bool halves = true, finite = true;
  std::string ratios;
  for (std::size_t i = 0; i < full.size(); ++i) {
    finite &= full[i].ok && full[i].params_finite;
    if (!full[i].ok || full[i].history.epochs.empty()) {
      halves = false;
      continue;
    }
    const double ratio = full[i].history.epochs.back().train_loss / full[i].history.epochs.front().train_loss;
    halves &= ratio < kLossRatio;
    ratios += Fmt("%s%.3f", i ? ", " : "", ratio);
  }
  const auto repeat = RunBenchmark(Benchmark(kSeeds[0]));
  bool identical = repeat.ok && full[0].ok && repeat.history.epochs.size() == full[0].history.epochs.size();
  if (identical) {
    const auto tmp = std::filesystem::temp_directory_path();
    const auto p1 = (tmp / "mtscid_accept_h1.csv").string(), p2 = (tmp / "mtscid_accept_h2.csv").string();
    full[0].history.WriteCsv(p1);
    repeat.history.WriteCsv(p2);
    identical = LoadCsv(p1).values == LoadCsv(p2).values;
    for (std::size_t e = 0; e < repeat.history.epochs.size(); ++e) {
      identical &= repeat.history.epochs[e].train_loss == full[0].history.epochs[e].train_loss &&
                   repeat.history.epochs[e].val_loss == full[0].history.epochs[e].val_loss &&
                   repeat.history.epochs[e].lr == full[0].history.epochs[e].lr;
    }
  }
  Report(7, halves && finite && identical,
         Fmt("final/first-epoch train loss ratios %s < %.1f; parameters finite every epoch: %s; "
             "repeated seed bit-identical history: %s",
             ratios.c_str(), kLossRatio, finite ? "yes" : "no", identical ? "yes" : "no"));

  // 8: lambda robustness on every seed.
  bool robust = true;
  std::string lambda_line;
  for (double lambda : kLambdas) {
    std::vector<double> f;
    for (std::size_t i = 0; i < kSeeds.size(); ++i) {
      RunResult r;
      if (lambda == 0.1) {
        f.push_back(full[i].f1);
        robust &= full[i].ok && full[i].params_finite && full[i].f1 >= kLambdaF1;
        continue;
      }
      auto cfg = Benchmark(kSeeds[i]);
      cfg.train.lambda = lambda;
      r = RunBenchmark(cfg);
      f.push_back(r.f1);
      robust &= r.ok && r.params_finite && r.f1 >= kLambdaF1;
      if (!r.ok) std::printf("  lambda %g seed %llu failed: %s\n", lambda, static_cast<unsigned long long>(kSeeds[i]), r.error.c_str());
    }
    lambda_line += Fmt("%slambda %g: %.4f/%.4f/%.4f", lambda_line.empty() ? "" : "; ", lambda, f[0], f[1], f[2]);
  }
  Report(8, robust, Fmt("%s; every run finite and >= %.2f", lambda_line.c_str(), kLambdaF1));

  // 9: checkpoint round trip.
  bool round_trip = false;
  std::string why;
  try {
    const auto& r = full[0];
    const auto path = (std::filesystem::temp_directory_path() / "mtscid_accept.ckpt").string();
    SaveCheckpoint(path, r.trained->model.config(), r.trained->model.state(), r.trained->norm);
    const auto ck = LoadCheckpoint<float>(path);
    const Model<float> loaded(ck.config, ck.state);
    const auto again = ScoreSeriesWith(loaded, *ck.norm, r.data.test, Benchmark(kSeeds[0]));
    round_trip = again == r.scores;
  } catch (const std::exception& e) {
    why = std::string(" (") + e.what() + ")";
  }
  Report(9, round_trip, "save -> load -> score gives a bit-identical ScoreSeries: " + std::string(round_trip ? "yes" : "no") + why);

  // Informational: the same benchmark at the default batch size of 64, which
  // leaves one optimizer step per epoch on 40 training windows.
  std::vector<double> big;
  for (auto seed : kSeeds) {
    auto cfg = Benchmark(seed);
    cfg.train.batch_size = 64;
    big.push_back(RunBenchmark(cfg).f1);
  }
  std::printf("info: batch_size 64 benchmark PA best-F1 %.4f/%.4f/%.4f (mean %.4f), not a criterion\n", big[0],
              big[1], big[2], Mean(big));

  std::printf("acceptance: %d failing criteria, %.1fs total\n", failures, Seconds(total_start));
  return failures == 0 ? 0 : 1;
}
