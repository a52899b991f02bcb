#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "mtscid/mtscid.hpp"
#include "test_support.hpp"

namespace mtscid {
namespace {

ModelConfig Hundred(std::size_t variates = 2) {
  ModelConfig c;
  c.window = 100;
  c.variates = variates;
  c.latent = 8;
  c.patch_sizes = {10, 20};
  c.kernel = 3;
  return c;
}

TsDataset RandomSeries(std::size_t length, std::size_t variates, std::uint64_t seed) {
  Rng rng(seed);
  TsDataset ds;
  ds.length = length;
  ds.variates = variates;
  for (std::size_t i = 0; i < length * variates; ++i) ds.values.push_back(rng.Normal());
  return ds;
}

std::vector<double> Flat(const Tensor<float>& t) { return {t.values().begin(), t.values().end()}; }

TEST(TemporalDeviation, Examples) {
  const std::vector<double> x{0.5, -1.0, 2.0, 3.0};
  EXPECT_EQ(TemporalDeviation(x, x, 2), (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(TemporalDeviation(std::vector<double>{1.0}, std::vector<double>{0.0}, 1), (std::vector<double>{1.0}));
  EXPECT_EQ(TemporalDeviation(std::vector<double>{1.0, 2.0}, std::vector<double>{0.0, 0.0}, 2),
            (std::vector<double>{5.0}));
  EXPECT_DOUBLE_EQ(TemporalDeviation(std::vector<double>{1.0, 2.0}, std::vector<double>{0.0, 0.0}, 2,
                                     DistanceKind::kL2)[0],
                   std::sqrt(5.0));
}

TEST(TemporalDeviation, ShapeErrors) {
  EXPECT_THROW(TemporalDeviation(std::vector<double>{1, 2}, std::vector<double>{1}, 1), ShapeError);
  EXPECT_THROW(TemporalDeviation(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}, 2), ShapeError);
}

TEST(RelationshipDeviation, Examples) {
  const auto bank = BuildPrototypes<double>(4, 2);
  const std::vector<double> bv(bank.matrix.values().begin(), bank.matrix.values().end());
  EXPECT_EQ(RelationshipDeviation(std::vector<double>{1.0, 1.0}, bv, 2)[0], 0.0);
  // Row 2 is [1, -1].
  EXPECT_NEAR(RelationshipDeviation(std::vector<double>{1.0, -1.0}, bv, 2)[0], 0.0, 1e-15);
  // [1, 3] is nearest to M_0 = [1, 1] at distance 2.
  EXPECT_NEAR(RelationshipDeviation(std::vector<double>{1.0, 3.0}, bv, 2)[0], 2.0, 1e-15);
  EXPECT_THROW(RelationshipDeviation(std::vector<double>{1.0, 1.0, 1.0}, bv, 2), ShapeError);
  EXPECT_THROW(RelationshipDeviation(std::vector<double>{1.0, 1.0}, std::vector<double>{}, 2), ShapeError);
}

// Exhaustive scan with prototypes built independently from the closed form.
TEST(RelationshipDeviation, MatchesBruteForceScan) {
  for (auto [L, C] : {std::pair<std::size_t, std::size_t>{16, 3}, {100, 5}}) {
    const auto bank = BuildPrototypes<double>(L, C);
    const std::vector<double> bv(bank.matrix.values().begin(), bank.matrix.values().end());
    const auto o = testing::RandomTensor({L, C}, L + C, -2, 2, false);
    const std::vector<double> ov(o.values().begin(), o.values().end());
    const auto rd = RelationshipDeviation(ov, bv, C);
    for (std::size_t t = 0; t < L; ++t) {
      double exact = std::numeric_limits<double>::infinity();
      long double closed = std::numeric_limits<long double>::infinity();
      for (std::size_t s = 0; s < L; ++s) {
        double acc = 0.0;
        long double acc_l = 0.0L;
        for (std::size_t c = 0; c < C; ++c) {
          const double d = ov[t * C + c] - bv[s * C + c];
          acc += d * d;
          const long double m = std::cos(2.0L * std::numbers::pi_v<long double> *
                                         static_cast<long double>((s * c) % L) / static_cast<long double>(L));
          acc_l += (ov[t * C + c] - m) * (ov[t * C + c] - m);
        }
        exact = std::min(exact, acc);
        closed = std::min(closed, acc_l);
      }
      EXPECT_EQ(rd[t], std::sqrt(exact));
      EXPECT_NEAR(rd[t], static_cast<double>(std::sqrt(closed)), 1e-12);
      EXPECT_GE(rd[t], 0.0);
    }
  }
}

TEST(AnomalyScore, Examples) {
  const std::vector<double> rd{0.3, -1.0, 2.0, 0.1};
  EXPECT_EQ(AnomalyScore(std::vector<double>(4, 0.0), rd), std::vector<double>(4, 0.0));
  const std::vector<double> td{1.0, 2.0, 3.0, 4.0};
  const auto uniform = AnomalyScore(td, std::vector<double>(4, 0.7));
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(uniform[t], td[t] / 4.0, 1e-15);
  const auto two = AnomalyScore(std::vector<double>{1.0, 1.0}, std::vector<double>{0.0, std::log(3.0)});
  EXPECT_NEAR(two[0], 0.25, 1e-15);
  EXPECT_NEAR(two[1], 0.75, 1e-15);
  EXPECT_TRUE(AnomalyScore({}, {}).empty());
  EXPECT_THROW(AnomalyScore(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST(AnomalyScore, BoundedByLargestTemporalDeviation) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> td(30), rd(30);
    for (auto& v : td) v = rng.Uniform(0.0, 5.0);
    for (auto& v : rd) v = rng.Uniform(0.0, 40.0);
    const auto a = AnomalyScore(td, rd);
    const auto weights = AnomalyScore(std::vector<double>(30, 1.0), rd);
    double wsum = 0.0, asum = 0.0;
    for (double w : weights) wsum += w;
    for (double v : a) {
      EXPECT_GE(v, 0.0);
      asum += v;
    }
    EXPECT_NEAR(wsum, 1.0, 1e-12);
    EXPECT_LE(asum, *std::max_element(td.begin(), td.end()) + 1e-12);
  }
}

TEST(ScoreDataset, ExactTilingCoversEveryStep) {
  const Model<float> model(Hundred(), 3);
  const auto series = RandomSeries(200, 2, 4);
  const auto s = ScoreDataset(model, series, {DistanceKind::kSquaredL2, 1});
  ASSERT_EQ(s.size(), 200u);
  ASSERT_EQ(s.td.size(), 200u);
  ASSERT_EQ(s.rd.size(), 200u);
  const auto windows = MakeWindows(series, 100, WindowMode::kTest);
  ASSERT_EQ(windows.count(), 2u);
  for (std::size_t w = 0; w < 2; ++w) {
    const auto one = ScoreWindow(model, windows.Gather<float>({w}), DistanceKind::kSquaredL2);
    for (std::size_t j = 0; j < 100; ++j) {
      EXPECT_EQ(s.td[w * 100 + j], one.td[j]);
      EXPECT_EQ(s.rd[w * 100 + j], one.rd[j]);
      EXPECT_EQ(s.ascore[w * 100 + j], one.ascore[j]);
    }
  }
}

TEST(ScoreDataset, EndAlignedWindowFillsOnlyTheRemainder) {
  const Model<float> model(Hundred(), 3);
  const auto series = RandomSeries(250, 2, 5);
  const auto s = ScoreDataset(model, series, {DistanceKind::kSquaredL2, 1});
  ASSERT_EQ(s.size(), 250u);
  const auto windows = MakeWindows(series, 100, WindowMode::kTest);
  ASSERT_EQ(windows.starts, (std::vector<std::size_t>{0, 100, 150}));
  const auto second = ScoreWindow(model, windows.Gather<float>({1}), DistanceKind::kSquaredL2);
  const auto tail = ScoreWindow(model, windows.Gather<float>({2}), DistanceKind::kSquaredL2);
  for (std::size_t t = 150; t < 200; ++t) EXPECT_EQ(s.ascore[t], second.ascore[t - 100]);
  for (std::size_t t = 200; t < 250; ++t) {
    EXPECT_EQ(s.td[t], tail.td[t - 150]);
    EXPECT_EQ(s.ascore[t], tail.ascore[t - 150]);
  }
  for (std::size_t t = 0; t < 250; ++t) {
    EXPECT_GE(s.td[t], 0.0);
    EXPECT_GE(s.rd[t], 0.0);
    EXPECT_GE(s.ascore[t], 0.0);
  }
}

TEST(ScoreDataset, IndependentOfThreadCountAndBatching) {
  const Model<float> model(Hundred(3), 8);
  const auto series = RandomSeries(730, 3, 6);
  const auto serial = ScoreDataset(model, series, {DistanceKind::kSquaredL2, 1});
  EXPECT_EQ(ScoreDataset(model, series, {DistanceKind::kSquaredL2, 4}), serial);
  EXPECT_EQ(ScoreDataset(model, series, {DistanceKind::kSquaredL2, 64}), serial);

  // All windows through one batched forward pass.
  const auto windows = MakeWindows(series, 100, WindowMode::kTest);
  std::vector<std::size_t> all(windows.count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto x = windows.Gather<float>(all);
  Tape<float> tape(false);
  const auto out = model.Forward(tape, x);
  const auto xv = Flat(x), xh = Flat(out.x_hat), ov = Flat(out.o);
  const auto bank = Flat(model.prototypes().matrix);
  const std::size_t stride = 100 * 3;
  for (std::size_t w = 0; w + 1 < windows.count(); ++w) {
    const std::span<const double> xs(xv.data() + w * stride, stride), hs(xh.data() + w * stride, stride),
        os(ov.data() + w * stride, stride);
    const auto a = AnomalyScore(TemporalDeviation(xs, hs, 3), RelationshipDeviation(os, bank, 3));
    for (std::size_t j = 0; j < 100; ++j) EXPECT_EQ(serial.ascore[w * 100 + j], a[j]);
  }
}

TEST(ScoreDataset, RespectsThreadEnvironment) {
  ::setenv("MTSCID_THREADS", "3", 1);
  EXPECT_EQ(ResolveThreads(0), 3u);
  EXPECT_EQ(ResolveThreads(2), 2u);
  ::unsetenv("MTSCID_THREADS");
  EXPECT_GE(ResolveThreads(0), 1u);
}

TEST(ScoreDataset, Errors) {
  const Model<float> model(Hundred(), 3);
  EXPECT_THROW(ScoreDataset(model, RandomSeries(99, 2, 1)), ShapeError);
  EXPECT_THROW(ScoreDataset(model, RandomSeries(300, 3, 1)), ShapeError);
}

TEST(ScoreWindow, SingleBranchFallbacks) {
  auto cfg = Hundred();
  cfg.disable_iveb = true;
  const Model<float> temporal(cfg, 2);
  const auto series = RandomSeries(100, 2, 9);
  const auto x = MakeWindows(series, 100, WindowMode::kTest).Gather<float>({0});
  const auto t = ScoreWindow(temporal, x, DistanceKind::kSquaredL2);
  EXPECT_EQ(t.ascore, t.td);
  EXPECT_EQ(t.rd, std::vector<double>(100, 0.0));

  cfg = Hundred();
  cfg.disable_taeb = true;
  const Model<float> inter(cfg, 2);
  const auto r = ScoreWindow(inter, x, DistanceKind::kSquaredL2);
  EXPECT_EQ(r.td, std::vector<double>(100, 0.0));
  EXPECT_EQ(r.ascore, AnomalyScore(r.rd, r.rd));
  double any = 0.0;
  for (double v : r.ascore) any += v;
  EXPECT_GT(any, 0.0);
}

TEST(ScoreWindow, PlainDistanceIsRootOfSquared) {
  const Model<float> model(Hundred(), 3);
  const auto x = MakeWindows(RandomSeries(100, 2, 10), 100, WindowMode::kTest).Gather<float>({0});
  const auto sq = ScoreWindow(model, x, DistanceKind::kSquaredL2);
  const auto l2 = ScoreWindow(model, x, DistanceKind::kL2);
  for (std::size_t j = 0; j < 100; ++j) EXPECT_NEAR(l2.td[j], std::sqrt(sq.td[j]), 1e-12);
  EXPECT_EQ(l2.rd, sq.rd);
}

TEST(ScoreSeries, CsvRoundTrip) {
  ScoreSeries s{{0.1, 1.0 / 3.0, 2.0}, {0.0, 0.5, 1e-17}, {0.05, 0.2, 0.9}};
  const std::string path = ::testing::TempDir() + "scores_test.csv";
  s.WriteCsv(path, std::vector<std::uint8_t>{0, 1, 0}, {"header"});
  const auto back = ReadScoresCsv(path);
  EXPECT_EQ(back.scores, s);
  ASSERT_TRUE(back.labels);
  EXPECT_EQ(*back.labels, (std::vector<std::uint8_t>{0, 1, 0}));
  s.WriteCsv(path);
  EXPECT_FALSE(ReadScoresCsv(path).labels);
  EXPECT_THROW(s.WriteCsv(path, std::vector<std::uint8_t>{0}), ShapeError);
}

}  // namespace
}  // namespace mtscid
