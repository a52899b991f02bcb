#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "mtscid/data.hpp"

namespace mtscid {
namespace {

std::string WriteFile(const std::string& name, const std::string& text) {
  const std::string path = ::testing::TempDir() + name;
  std::ofstream(path) << text;
  return path;
}

std::string LoadError(const std::string& text) {
  try {
    LoadCsv(WriteFile("bad.csv", text));
  } catch (const IoError& e) {
    return e.what();
  }
  return "";
}

TsDataset Series(std::size_t length, std::size_t variates) {
  TsDataset ds;
  ds.length = length;
  ds.variates = variates;
  for (std::size_t i = 0; i < length * variates; ++i) ds.values.push_back(static_cast<double>(i));
  return ds;
}

void ExpectStandardized(const TsDataset& ds, double tol) {
  for (std::size_t c = 0; c < ds.variates; ++c) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t t = 0; t < ds.length; ++t) mean += ds.at(t, c);
    mean /= static_cast<double>(ds.length);
    for (std::size_t t = 0; t < ds.length; ++t) sq += (ds.at(t, c) - mean) * (ds.at(t, c) - mean);
    EXPECT_NEAR(mean, 0.0, tol);
    EXPECT_NEAR(std::sqrt(sq / static_cast<double>(ds.length)), 1.0, tol);
  }
}

SyntheticOptions Bench(std::uint64_t seed, double rate = 0.03) {
  SyntheticOptions o;
  o.seed = seed;
  o.anomaly_rate = rate;
  return o;
}

TEST(LoadCsv, ValuesWithoutLabels) {
  const auto ds = LoadCsv(WriteFile("plain.csv", "a,b\n1,2\n3,4.5\n-1e-3,6\n"));
  EXPECT_EQ(ds.length, 3u);
  EXPECT_EQ(ds.variates, 2u);
  EXPECT_EQ(ds.values, (std::vector<double>{1, 2, 3, 4.5, -1e-3, 6}));
  EXPECT_FALSE(ds.labels);
  EXPECT_EQ(ds.variate_names, (std::vector<std::string>{"a", "b"}));
}

TEST(LoadCsv, LabelColumnRouted) {
  const auto ds = LoadCsv(WriteFile("labeled.csv", "# comment\na,b,label\n1,2,0\n3,4,1\n\n5,6,0\n"));
  EXPECT_EQ(ds.variates, 2u);
  ASSERT_TRUE(ds.labels);
  EXPECT_EQ(*ds.labels, (std::vector<std::uint8_t>{0, 1, 0}));
  EXPECT_EQ(ds.at(2, 1), 6.0);
}

TEST(LoadCsv, Errors) {
  EXPECT_THROW(LoadCsv(::testing::TempDir() + "does_not_exist.csv"), IoError);
  EXPECT_NE(LoadError("a,b\n1,2\n3\n").find("expected 2 cells"), std::string::npos);
  EXPECT_NE(LoadError("a,b\n1,x\n").find("non-numeric"), std::string::npos);
  EXPECT_NE(LoadError("a,label\n1,2\n").find("label"), std::string::npos);
  EXPECT_NE(LoadError("").find("header"), std::string::npos);
  const std::string nan = LoadError("a,b\n1,2\n3,4\nNaN,5\n");
  EXPECT_NE(nan.find("row 3"), std::string::npos) << nan;
  EXPECT_NE(LoadError("a\ninf\n").find("row 1"), std::string::npos);
}

TEST(SaveCsv, RoundTripsExactly) {
  TsDataset ds;
  ds.length = 2;
  ds.variates = 2;
  ds.values = {1.0 / 3.0, -2.5e-17, 1e300, 0.1};
  ds.labels = std::vector<std::uint8_t>{1, 0};
  ds.variate_names = {"x", "y"};
  const std::string path = ::testing::TempDir() + "roundtrip.csv";
  SaveCsv(ds, path, {"generated"});
  const auto back = LoadCsv(path);
  EXPECT_EQ(back.values, ds.values);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.variate_names, ds.variate_names);
}

TEST(Normalize, FitAndApply) {
  const auto raw = GenerateSynthetic(Bench(1)).train;
  const auto [z, stats] = Normalize(raw);
  ExpectStandardized(z, 1e-6);
  EXPECT_TRUE(stats.degenerate.empty());
  // Refit on standardized data changes nothing.
  const auto [again, unused] = Normalize(z);
  for (std::size_t i = 0; i < z.values.size(); ++i) EXPECT_NEAR(again.values[i], z.values[i], 1e-6);
}

TEST(Normalize, ConstantVariateKeepsUnitScale) {
  TsDataset ds = Series(4, 2);
  for (std::size_t t = 0; t < 4; ++t) ds.values[t * 2 + 1] = 3.5;
  const auto [z, stats] = Normalize(ds);
  EXPECT_EQ(stats.degenerate, (std::vector<std::size_t>{1}));
  EXPECT_EQ(stats.stddev[1], 1.0);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(z.at(t, 1), 0.0);
}

TEST(Normalize, TrainStatsOnTestLeaveOffset) {
  const auto data = GenerateSynthetic(Bench(2));
  const auto [train, stats] = Normalize(data.train);
  TsDataset shifted = data.test;
  for (auto& v : shifted.values) v += 1.0;
  const auto [test, same] = Normalize(shifted, stats);
  EXPECT_EQ(same.mean, stats.mean);
  double mean = 0.0;
  for (std::size_t t = 0; t < test.length; ++t) mean += test.at(t, 0);
  EXPECT_GT(std::abs(mean / static_cast<double>(test.length)), 0.1);
  EXPECT_THROW(Normalize(Series(10, 3), stats), ShapeError);
}

TEST(MakeWindows, TilingExamples) {
  const auto ds = Series(250, 2);
  EXPECT_EQ(MakeWindows(ds, 100, WindowMode::kTrain).starts, (std::vector<std::size_t>{0, 100}));
  EXPECT_EQ(MakeWindows(ds, 100, WindowMode::kTest).starts, (std::vector<std::size_t>{0, 100, 150}));
  const auto exact = Series(200, 2);
  EXPECT_EQ(MakeWindows(exact, 100, WindowMode::kTrain).count(), 2u);
  EXPECT_EQ(MakeWindows(exact, 100, WindowMode::kTest).count(), 2u);
  EXPECT_THROW(MakeWindows(Series(99, 2), 100, WindowMode::kTrain), ShapeError);
  EXPECT_THROW(MakeWindows(ds, 0, WindowMode::kTrain), ConfigError);
}

TEST(MakeWindows, ContentsAndCoverage) {
  for (std::size_t T : {100u, 173u, 250u, 399u}) {
    const auto ds = Series(T, 3);
    const auto test = MakeWindows(ds, 50, WindowMode::kTest);
    std::vector<int> seen(T, 0);
    for (std::size_t w = 0; w < test.count(); ++w) {
      if (w > 0) EXPECT_GT(test.starts[w], test.starts[w - 1]);
      EXPECT_LE(test.starts[w] + 50, T);
      for (std::size_t j = 0; j < 50; ++j) {
        ++seen[test.starts[w] + j];
        for (std::size_t c = 0; c < 3; ++c) {
          EXPECT_EQ(test.values[(w * 50 + j) * 3 + c], ds.at(test.starts[w] + j, c));
        }
      }
    }
    for (int s : seen) EXPECT_GE(s, 1);
    const auto train = MakeWindows(ds, 50, WindowMode::kTrain);
    EXPECT_EQ(train.count(), T / 50);
    EXPECT_EQ(train.starts.back() + 50, (T / 50) * 50);
  }
}

TEST(MakeWindows, GatherStacksSelected) {
  const auto b = MakeWindows(Series(6, 1), 2, WindowMode::kTrain);
  const auto x = b.Gather<double>({2, 0});
  EXPECT_EQ(x.shape(), (Shape{2, 2, 1}));
  EXPECT_EQ(std::vector<double>(x.values().begin(), x.values().end()), (std::vector<double>{4, 5, 0, 1}));
  EXPECT_THROW(b.Gather<double>({3}), ShapeError);
}

TEST(GenerateSynthetic, ZeroRateHasNoLabels) {
  const auto d = GenerateSynthetic(Bench(3, 0.0));
  ASSERT_TRUE(d.test.labels);
  for (auto l : *d.test.labels) EXPECT_EQ(l, 0);
  EXPECT_TRUE(d.anomalies.empty());
}

TEST(GenerateSynthetic, DeterministicPerSeed) {
  const auto a = GenerateSynthetic(Bench(4)), b = GenerateSynthetic(Bench(4));
  EXPECT_EQ(a.train.values, b.train.values);
  EXPECT_EQ(a.test.values, b.test.values);
  EXPECT_EQ(a.test.labels, b.test.labels);
  EXPECT_NE(GenerateSynthetic(Bench(5)).train.values, a.train.values);
}

TEST(GenerateSynthetic, LabeledFractionNearRequestedRate) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto d = GenerateSynthetic(Bench(seed));
    std::size_t n = 0;
    for (auto l : *d.test.labels) n += l;
    const double frac = static_cast<double>(n) / 5000.0;
    EXPECT_GE(frac, 0.024) << seed;
    EXPECT_LE(frac, 0.036) << seed;
  }
}

TEST(GenerateSynthetic, ShapesAndCleanTrainSplit) {
  const auto d = GenerateSynthetic(Bench(6));
  EXPECT_EQ(d.train.length, 5000u);
  EXPECT_EQ(d.test.length, 5000u);
  EXPECT_EQ(d.train.variates, 5u);
  EXPECT_FALSE(d.train.labels.has_value() && std::count(d.train.labels->begin(), d.train.labels->end(), 1) > 0);
  d.train.Validate();
  d.test.Validate();
}

TEST(GenerateSynthetic, LabelsMarkExactlyTheInjectedSteps) {
  const auto d = GenerateSynthetic(Bench(7));
  std::vector<std::uint8_t> expect(5000, 0);
  bool kinds[3] = {false, false, false};
  for (const auto& a : d.anomalies) {
    kinds[static_cast<int>(a.kind)] = true;
    for (std::size_t t = a.start; t < a.start + a.length; ++t) expect[t] = 1;
    if (a.kind == AnomalyKind::kSpike) EXPECT_LE(a.length, 3u);
    if (a.kind != AnomalyKind::kSpike) {
      EXPECT_GE(a.length, 20u);
      EXPECT_LE(a.length, 50u);
    }
  }
  EXPECT_EQ(*d.test.labels, expect);
  EXPECT_TRUE(kinds[0] && kinds[1] && kinds[2]);
}

TEST(GenerateSynthetic, VariatesShareStructure) {
  const auto d = GenerateSynthetic(Bench(8));
  const auto& tr = d.train;
  double strongest = 0.0;
  for (std::size_t a = 0; a < 5; ++a) {
    for (std::size_t b = a + 1; b < 5; ++b) {
      double ma = 0, mb = 0, sab = 0, saa = 0, sbb = 0;
      for (std::size_t t = 0; t < tr.length; ++t) ma += tr.at(t, a), mb += tr.at(t, b);
      ma /= 5000.0;
      mb /= 5000.0;
      for (std::size_t t = 0; t < tr.length; ++t) {
        sab += (tr.at(t, a) - ma) * (tr.at(t, b) - mb);
        saa += (tr.at(t, a) - ma) * (tr.at(t, a) - ma);
        sbb += (tr.at(t, b) - mb) * (tr.at(t, b) - mb);
      }
      strongest = std::max(strongest, std::abs(sab / std::sqrt(saa * sbb)));
    }
  }
  EXPECT_GT(strongest, 0.3);
}

TEST(GenerateSynthetic, RejectsInvalidOptions) {
  auto o = Bench(1);
  o.variates = 1;
  EXPECT_THROW(GenerateSynthetic(o), ConfigError);
  o = Bench(1, 0.2);
  EXPECT_THROW(GenerateSynthetic(o), ConfigError);
  o = Bench(1, -0.01);
  EXPECT_THROW(GenerateSynthetic(o), ConfigError);
  o = Bench(1);
  o.train_length = 0;
  EXPECT_THROW(GenerateSynthetic(o), ConfigError);
}

}  // namespace
}  // namespace mtscid
