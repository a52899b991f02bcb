#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "mtscid/mtscid.hpp"
#include "test_support.hpp"

namespace mtscid {
namespace {

using testing::GradCheck;
using testing::RandomTensor;

ModelConfig Tiny() {
  ModelConfig c;
  c.window = 8;
  c.variates = 2;
  c.latent = 4;
  c.patch_sizes = {4};
  c.kernel = 3;
  return c;
}

ModelConfig Standard() {
  ModelConfig c;
  c.window = 100;
  c.variates = 5;
  c.latent = 32;
  return c;
}

template <typename T>
std::vector<T> Values(const Tensor<T>& t) {
  return {t.values().begin(), t.values().end()};
}

// Moves every parameter off its initial value so no gradient is trivially zero.
void Jitter(Model<double>& model, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : model.Parameters()) {
    auto v = p.tensor.mutable_values();
    for (auto& x : v) x += rng.Uniform(-0.3, 0.3);
  }
}

TEST(Prototypes, SmallBankColumns) {
  const auto bank = BuildPrototypes<double>(4, 2);
  ASSERT_EQ(bank.matrix.shape(), (Shape{4, 2}));
  const std::vector<double> col1{1, 0, -1, 0};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(bank.matrix.at({i, 0}), 1.0);
    EXPECT_NEAR(bank.matrix.at({i, 1}), col1[i], 1e-15);
  }
}

// Oracle: angle reduced exactly in integers, cosine in extended precision.
TEST(Prototypes, ClosedFormAtEveryEntry) {
  for (auto [L, C] : {std::pair<std::size_t, std::size_t>{4, 2}, {100, 25}}) {
    const auto bank = BuildPrototypes<double>(L, C);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < C; ++j) {
        const long double angle = 2.0L * std::numbers::pi_v<long double> *
                                  static_cast<long double>((i * j) % L) / static_cast<long double>(L);
        const double want = static_cast<double>(std::cos(angle));
        EXPECT_NEAR(bank.matrix.at({i, j}), want, 4e-15) << i << "," << j;
        EXPECT_LE(std::abs(bank.matrix.at({i, j})), 1.0);
        EXPECT_EQ(bank.matrix_t.at({j, i}), bank.matrix.at({i, j}));
      }
    }
    for (std::size_t j = 0; j < C; ++j) EXPECT_EQ(bank.matrix.at({0, j}), 1.0);
    for (std::size_t i = 0; i < L; ++i) EXPECT_EQ(bank.matrix.at({i, 0}), 1.0);
    EXPECT_EQ(Values(BuildPrototypes<double>(L, C).matrix), Values(bank.matrix));
  }
}

TEST(Config, RejectsInvalidCombinations) {
  auto bad = Standard();
  bad.patch_sizes = {10, 30};
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = Standard();
  bad.patch_sizes = {1};
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = Standard();
  bad.kernel = 4;
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = Standard();
  bad.tau = 0.0;
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = Standard();
  bad.disable_taeb = bad.disable_iveb = true;
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = Standard();
  bad.latent = 0;
  EXPECT_THROW(bad.Validate(), ConfigError);
  EXPECT_NO_THROW(Standard().Validate());
  EXPECT_EQ(Standard().bins(), 51u);
  EXPECT_DOUBLE_EQ(Standard().temperature(), std::sqrt(5.0));
}

TEST(Model, ParameterShapes) {
  const auto cfg = Standard();
  const auto state = InitModelState<float>(cfg, 1);
  const auto& t = *state.temporal;
  EXPECT_EQ(t.w_real.shape(), (Shape{5, 32}));
  EXPECT_EQ(t.w_imag.shape(), (Shape{5, 32}));
  ASSERT_EQ(t.map_matrices.size(), 2u);
  EXPECT_EQ(t.map_matrices[0].shape(), (Shape{10, 10}));
  EXPECT_EQ(t.map_matrices[1].shape(), (Shape{5, 20}));
  EXPECT_EQ(t.norm_scale.shape(), (Shape{32}));
  EXPECT_EQ(t.decoder_weight.shape(), (Shape{32, 5}));
  EXPECT_EQ(t.decoder_bias.shape(), (Shape{5}));
  const auto& v = *state.inter;
  EXPECT_EQ(v.conv_kernels.shape(), (Shape{5, 5}));
  EXPECT_EQ(v.conv_bias.shape(), (Shape{5}));
  EXPECT_EQ(v.norm_scale.shape(), (Shape{5}));
  for (float s : t.norm_scale.values()) EXPECT_EQ(s, 1.0f);
  for (float b : v.conv_bias.values()) EXPECT_EQ(b, 0.0f);
  const float bound = 1.0f / std::sqrt(5.0f);
  for (float w : t.w_real.values()) EXPECT_LE(std::abs(w), bound);
}

TEST(Model, ForwardShapesAndDistributions) {
  Model<float> model(Standard(), 2);
  const auto x = CastTensor<float>(RandomTensor({2, 100, 5}, 3, -2, 2, false));
  Tape<float> tape(false);
  const auto out = model.Forward(tape, x);
  EXPECT_EQ(out.x_hat.shape(), (Shape{2, 100, 5}));
  EXPECT_EQ(out.o.shape(), (Shape{2, 100, 5}));
  ASSERT_EQ(out.w.shape(), (Shape{2, 100, 100}));
  for (std::size_t r = 0; r < 200; ++r) {
    double sum = 0.0;
    for (std::size_t i = 0; i < 100; ++i) {
      const float w = out.w[r * 100 + i];
      EXPECT_GT(w, 0.0f);
      EXPECT_LT(w, 1.0f);
      sum += w;
    }
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
  EXPECT_THROW(model.Forward(tape, Tensor<float>::Zeros({1, 50, 5})), ShapeError);
}

TEST(Model, ConstantInputHasOnlyDcSpectrum) {
  const Dft<double> dft(100);
  Tape<double> tape;
  const auto spec = dft.Forward(tape, Tensor<double>::Full({2, 100, 3}, 1.7), SpectralAxis::kRows);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t k = 0; k < 51; ++k) {
      for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_NEAR(spec.real.at({b, k, c}), k == 0 ? 170.0 : 0.0, 1e-10);
        EXPECT_NEAR(spec.imag.at({b, k, c}), 0.0, 1e-10);
      }
    }
  }
}

TEST(InterVariate, ZeroInputGivesLayerNormShift) {
  const auto cfg = Standard();
  auto state = InitModelState<double>(cfg, 4);
  auto& s = *state.inter;
  const std::vector<double> shift{0.1, -0.2, 0.3, 0.4, -0.5};
  std::copy(shift.begin(), shift.end(), s.norm_shift.mutable_values().begin());
  const Dft<double> dft(cfg.window);
  Tape<double> tape;
  const auto o = InterVariateForward(tape, Tensor<double>::Zeros({1, 100, 5}), s, cfg, dft);
  for (std::size_t t = 0; t < 100; ++t) {
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(o.at({0, t, c}), shift[c], 1e-12);
  }
}

TEST(InterVariate, SingletonAttentionIsIdentity) {
  Tape<double> tape;
  const auto v = RandomTensor({2, 1, 51}, 5, -3, 3, false);
  EXPECT_EQ(Values(detail::SelfAttention(tape, v, 1.0 / std::sqrt(51.0))), Values(v));
}

TEST(PrototypeAttention, RowsSumToOneAndZeroIsUniform) {
  const auto bank = BuildPrototypes<double>(10, 3);
  Tape<double> tape;
  const auto w0 = PrototypeAttention(tape, Tensor<double>::Zeros({1, 10, 3}), bank, 1.0);
  for (double v : w0.values()) EXPECT_NEAR(v, 0.1, 1e-15);
  const auto w = PrototypeAttention(tape, RandomTensor({2, 10, 3}, 6, -2, 2, false), bank, 0.7);
  const auto sums = tape.Sum(w, -1);
  for (double s : sums.values()) EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_THROW(PrototypeAttention(tape, Tensor<double>::Zeros({1, 10, 3}), bank, 0.0), ConfigError);
  EXPECT_THROW(PrototypeAttention(tape, Tensor<double>::Zeros({1, 10, 4}), bank, 1.0), ShapeError);
}

// Brute-force scan finds rows s that uniquely maximize <M_s, M_i> at i = s;
// scaled copies of those rows must select themselves.
TEST(PrototypeAttention, ScaledPrototypeSelectsItself) {
  const std::size_t L = 12, C = 4;
  const auto bank = BuildPrototypes<double>(L, C);
  std::size_t checked = 0;
  for (std::size_t s = 0; s < L; ++s) {
    std::vector<double> dots(L);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < C; ++j) dots[i] += bank.matrix.at({s, j}) * bank.matrix.at({i, j});
    }
    bool unique = true;
    for (std::size_t i = 0; i < L; ++i) {
      if (i != s && dots[i] >= dots[s] - 1e-9) unique = false;
    }
    if (!unique) continue;
    std::vector<double> o(C);
    for (std::size_t j = 0; j < C; ++j) o[j] = 50.0 * bank.matrix.at({s, j});
    Tape<double> tape;
    const auto w = PrototypeAttention(tape, Tensor<double>({1, 1, C}, o), bank, 0.1);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < L; ++i) {
      if (w[i] > w[arg]) arg = i;
    }
    EXPECT_EQ(arg, s);
    ++checked;
  }
  EXPECT_GT(checked, 0u);
}

TEST(Model, BranchesAreIsolated) {
  Model<double> model(Standard(), 7);
  const auto x = RandomTensor({1, 100, 5}, 8, -1, 1, false);
  Tape<double> tape(false);
  const auto before = model.Forward(tape, x);
  model.mutable_state().temporal->decoder_weight.mutable_values()[0] += 0.5;
  const auto after = model.Forward(tape, x);
  EXPECT_NE(Values(before.x_hat), Values(after.x_hat));
  EXPECT_EQ(Values(before.o), Values(after.o));
  EXPECT_EQ(Values(before.w), Values(after.w));
}

TEST(Model, DeterministicForSeedAndInput) {
  const auto x = CastTensor<float>(RandomTensor({2, 100, 5}, 9, -1, 1, false));
  auto run = [&](std::uint64_t seed) {
    Model<float> model(Standard(), seed);
    Tape<float> tape(false);
    const auto out = model.Forward(tape, x);
    return std::make_tuple(Values(out.x_hat), Values(out.o), Values(out.w));
  };
  EXPECT_EQ(run(3), run(3));
  EXPECT_NE(std::get<0>(run(3)), std::get<0>(run(4)));
}

TEST(Model, DisabledBranchesCreateNoParameters) {
  auto cfg = Standard();
  cfg.disable_iveb = true;
  Model<float> temporal_only(cfg, 1);
  for (const auto& p : temporal_only.Parameters()) EXPECT_EQ(p.name.rfind("temporal.", 0), 0u);
  Tape<float> tape(false);
  const auto out = temporal_only.Forward(tape, Tensor<float>::Zeros({1, 100, 5}));
  EXPECT_TRUE(out.x_hat.defined());
  EXPECT_FALSE(out.o.defined());
  EXPECT_FALSE(out.w.defined());

  cfg = Standard();
  cfg.disable_taeb = true;
  Model<float> inter_only(cfg, 1);
  for (const auto& p : inter_only.Parameters()) EXPECT_EQ(p.name.rfind("inter.", 0), 0u);

  cfg = Standard();
  cfg.time_domain_mode = true;
  cfg.disable_patch_attention = true;
  const auto state = InitModelState<float>(cfg, 1);
  EXPECT_FALSE(state.temporal->w_imag.defined());
  EXPECT_TRUE(state.temporal->map_matrices.empty());
  EXPECT_EQ(cfg.bins(), 100u);

  cfg = Standard();
  cfg.conv_as_linear = true;
  EXPECT_EQ(InitModelState<float>(cfg, 1).inter->conv_kernels.shape(), (Shape{5, 5}));
  cfg = Standard();
  cfg.channel_mixing_conv = true;
  EXPECT_EQ(InitModelState<float>(cfg, 1).inter->conv_kernels.shape(), (Shape{5, 5, 5}));
}

TEST(Model, StateLayoutIsChecked) {
  auto state = InitModelState<float>(Standard(), 1);
  EXPECT_THROW(Model<float>(Tiny(), state), Error);
  auto cfg = Standard();
  cfg.disable_iveb = true;
  EXPECT_THROW(Model<float>(cfg, state), ConfigError);
}

TEST(Model, SingleScaleAverageIsThatScale) {
  auto one = Tiny();
  auto two = Tiny();
  two.patch_sizes = {4, 4};
  Model<double> m1(one, 11);
  Jitter(m1, 12);
  auto s2 = InitModelState<double>(two, 11);
  auto& t1 = *m1.state().temporal;
  auto& t2 = *s2.temporal;
  t2.w_real = t1.w_real;
  t2.w_imag = t1.w_imag;
  t2.map_matrices = {t1.map_matrices[0], t1.map_matrices[0]};
  t2.norm_scale = t1.norm_scale;
  t2.norm_shift = t1.norm_shift;
  t2.decoder_weight = t1.decoder_weight;
  t2.decoder_bias = t1.decoder_bias;
  s2.inter = m1.state().inter;
  Model<double> m2(two, s2);
  const auto x = RandomTensor({2, 8, 2}, 13, -1, 1, false);
  Tape<double> tape(false);
  const auto a = m1.Forward(tape, x).x_hat;
  const auto b = m2.Forward(tape, x).x_hat;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(GradCheck, FullModelLossTinyConfig) {
  Model<double> model(Tiny(), 21);
  Jitter(model, 22);
  const auto x = RandomTensor({2, 8, 2}, 23, -1.5, 1.5, false);
  std::vector<Tensor<double>> params;
  for (auto& p : model.Parameters()) params.push_back(p.tensor);
  const double err = GradCheck(params, [&](Tape<double>& tape) {
    return ComputeLosses(tape, x, model.Forward(tape, x), 0.1).total;
  });
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, AblationVariants) {
  for (int variant = 0; variant < 5; ++variant) {
    auto cfg = Tiny();
    if (variant == 0) cfg.time_domain_mode = true;
    if (variant == 1) cfg.conv_as_linear = true;
    if (variant == 2) cfg.channel_mixing_conv = true;
    if (variant == 3) cfg.disable_patch_attention = true;
    if (variant == 4) cfg.patch_sizes = {2, 4};
    Model<double> model(cfg, 30 + variant);
    Jitter(model, 40 + variant);
    const auto x = RandomTensor({2, 8, 2}, 50 + variant, -1.5, 1.5, false);
    std::vector<Tensor<double>> params;
    for (auto& p : model.Parameters()) params.push_back(p.tensor);
    const double err = GradCheck(params, [&](Tape<double>& tape) {
      return ComputeLosses(tape, x, model.Forward(tape, x), 0.5).total;
    });
    EXPECT_LT(err, 1e-4) << "variant " << variant;
  }
}

TEST(Model, GradientsFiniteForEveryParameter) {
  Model<float> model(Standard(), 60);
  const auto x = CastTensor<float>(RandomTensor({2, 100, 5}, 61, -3, 3, false));
  Tape<float> tape;
  tape.Backward(ComputeLosses(tape, x, model.Forward(tape, x), 0.1).total);
  for (const auto& p : model.Parameters()) {
    ASSERT_TRUE(p.tensor.has_grad()) << p.name;
    for (float g : p.tensor.grad()) EXPECT_TRUE(std::isfinite(g)) << p.name;
  }
}

// Two tones that repeat exactly every window. 200 steps at the starting
// learning rate must bring reconstruction error under a tenth of the variance.
TEST(Model, FitsTwoToneSignal) {
  ModelConfig cfg;
  cfg.window = 100;
  cfg.variates = 2;
  cfg.latent = 32;
  cfg.disable_iveb = true;
  TsDataset ds;
  ds.length = 1000;
  ds.variates = 2;
  ds.variate_names = {"a", "b"};
  for (std::size_t t = 0; t < ds.length; ++t) {
    const double tt = static_cast<double>(t);
    ds.values.push_back(std::sin(2 * std::numbers::pi * 2 * tt / 100) + 0.5 * std::sin(2 * std::numbers::pi * 5 * tt / 100));
    ds.values.push_back(std::cos(2 * std::numbers::pi * 3 * tt / 100) - 0.4 * std::sin(2 * std::numbers::pi * 7 * tt / 100 + 1));
  }
  const auto windows = MakeWindows(ds, 100, WindowMode::kTrain);
  Model<float> model(cfg, 5);
  TrainConfig tc;
  AdamW<float> opt(model.Parameters(), tc);
  Rng rng(1);
  for (std::size_t step = 0; step < 200; ++step) {
    Tape<float> tape;
    const auto x = windows.Gather<float>({static_cast<std::size_t>(rng.UniformInt(0, 9))});
    const auto losses = ComputeLosses(tape, x, model.Forward(tape, x), 0.1);
    opt.ZeroGrad();
    tape.Backward(losses.total);
    opt.Step(tc.lr_start);
  }
  double mean = 0.0;
  for (double v : ds.values) mean += v;
  mean /= static_cast<double>(ds.values.size());
  double var = 0.0;
  for (double v : ds.values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(ds.values.size());
  Tape<float> tape(false);
  const auto x = windows.Gather<float>({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto out = model.Forward(tape, x);
  double mse = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) mse += std::pow(x[i] - out.x_hat[i], 2);
  mse /= static_cast<double>(x.numel());
  EXPECT_LT(mse, 0.1 * var);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto cfg = Standard();
  cfg.tau = 0.75;
  Model<float> model(cfg, 70);
  const auto path = (std::filesystem::temp_directory_path() / "mtscid_model_rt.ckpt").string();
  NormStats norm{{1.0 / 3.0, 0.1, -2.7, 4e-9, 5}, {0.5, 1.0 / 7.0, 1.5, 2, 2.5e10}, {}};
  SaveCheckpoint(path, model.config(), model.state(), std::optional<NormStats>(norm));
  const auto ck = LoadCheckpoint<float>(path);
  EXPECT_EQ(ck.config.window, cfg.window);
  EXPECT_EQ(ck.config.patch_sizes, cfg.patch_sizes);
  ASSERT_TRUE(ck.config.tau.has_value());
  EXPECT_EQ(*ck.config.tau, 0.75);
  const auto a = model.Parameters();
  const auto b = ck.state.Parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(Values(a[i].tensor), Values(b[i].tensor));
  }
  ASSERT_TRUE(ck.norm.has_value());
  EXPECT_EQ(ck.norm->mean, norm.mean);
  EXPECT_EQ(ck.norm->stddev, norm.stddev);
  std::filesystem::remove(path);
}

TEST(Checkpoint, DisabledBranchIsNotSerialized) {
  auto cfg = Standard();
  cfg.disable_taeb = true;
  Model<float> model(cfg, 71);
  const auto path = (std::filesystem::temp_directory_path() / "mtscid_model_abl.ckpt").string();
  SaveCheckpoint(path, model.config(), model.state());
  const auto ck = LoadCheckpoint<float>(path);
  EXPECT_TRUE(ck.config.disable_taeb);
  EXPECT_FALSE(ck.state.temporal.has_value());
  EXPECT_FALSE(ck.norm.has_value());
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto dir = std::filesystem::temp_directory_path();
  EXPECT_THROW(LoadCheckpoint<float>((dir / "mtscid_does_not_exist.ckpt").string()), IoError);
  const auto bad = (dir / "mtscid_bad_magic.ckpt").string();
  {
    std::ofstream out(bad, std::ios::binary);
    out << "NOTACHECKPOINT";
  }
  EXPECT_THROW(LoadCheckpoint<float>(bad), IoError);
  Model<float> model(Tiny(), 72);
  const auto good = (dir / "mtscid_truncated.ckpt").string();
  SaveCheckpoint(good, model.config(), model.state());
  const auto size = std::filesystem::file_size(good);
  std::filesystem::resize_file(good, size - 3);
  EXPECT_THROW(LoadCheckpoint<float>(good), IoError);
  std::filesystem::remove(bad);
  std::filesystem::remove(good);
}

}  // namespace
}  // namespace mtscid
