#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "fixtures.hpp"
#include "pldc/metrics.hpp"
#include "pldc/random.hpp"

using namespace pldc;
using namespace pldc::metrics;

namespace {

std::vector<std::string> labels(std::size_t k) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back("c" + std::to_string(i));
  return out;
}

// Textbook definitions, written out per class.
struct Brute {
  double accuracy, macro_p, macro_r, macro_f1;
  std::vector<double> p, r, f1;
};

Brute brute_report(const std::vector<std::vector<std::uint64_t>>& m) {
  const std::size_t k = m.size();
  std::uint64_t total = 0, correct = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      total += m[i][j];
      if (i == j) correct += m[i][j];
    }
  Brute b{static_cast<double>(correct) / static_cast<double>(total), 0, 0, 0, {}, {}, {}};
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t tp = m[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += m[o][c];
      fn += m[c][o];
    }
    const double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double f = p + r == 0 ? 0.0 : 2.0 * p * r / (p + r);
    b.p.push_back(p);
    b.r.push_back(r);
    b.f1.push_back(f);
  }
  for (std::size_t c = 0; c < k; ++c) {
    b.macro_p += b.p[c];
    b.macro_r += b.r[c];
    b.macro_f1 += b.f1[c];
  }
  b.macro_p /= static_cast<double>(k);
  b.macro_r /= static_cast<double>(k);
  b.macro_f1 /= static_cast<double>(k);
  return b;
}

ConfusionMatrix to_cm(const std::vector<std::vector<std::uint64_t>>& m) {
  std::vector<std::uint64_t> flat;
  for (const auto& row : m) flat.insert(flat.end(), row.begin(), row.end());
  return ConfusionMatrix(labels(m.size()), flat);
}

}  // namespace

TEST(Confusion, FromPairs) {
  const auto cm = confusion_from_pairs({{"a", "a"}, {"b", "b"}}, {"a", "b"});
  EXPECT_EQ(cm, ConfusionMatrix({"a", "b"}, {1, 0, 0, 1}));
  const auto empty = confusion_from_pairs({}, {"a", "b"});
  EXPECT_EQ(empty.total(), 0u);
}

TEST(Confusion, MatchesTally) {
  Rng rng(1);
  const std::vector<std::string> L = {"x", "y", "z"};
  std::vector<std::pair<std::string, std::string>> pairs;
  std::map<std::pair<std::string, std::string>, std::uint64_t> tally;
  for (int i = 0; i < 100; ++i) {
    pairs.emplace_back(L[rng.below(3)], L[rng.below(3)]);
    ++tally[pairs.back()];
  }
  const auto cm = confusion_from_pairs(pairs, L);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t p = 0; p < 3; ++p) EXPECT_EQ(cm.at(t, p), tally[std::make_pair(L[t], L[p])]);
  EXPECT_EQ(cm.total(), 100u);
}

TEST(Confusion, Errors) {
  try {
    confusion_from_pairs({{"a", "q"}}, {"a", "b"});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("'q'"), std::string::npos);
  }
  EXPECT_THROW(confusion_from_pairs({}, {"a", "a"}), InvalidArgument);
  EXPECT_THROW(ConfusionMatrix({"a", "b"}, {1, 2, 3}), DimensionError);
}

TEST(Report, WorkedTwoClass) {
  const auto r = compute_report(ConfusionMatrix({"0", "1"}, {8, 2, 4, 6}));
  EXPECT_NEAR(r.accuracy, 0.70, 1e-12);
  EXPECT_NEAR(r.per_class[0].precision, 8.0 / 12.0, 1e-12);
  EXPECT_NEAR(r.per_class[0].recall, 0.8, 1e-12);
  EXPECT_NEAR(r.per_class[0].f1, 0.7272727272727273, 1e-12);
  EXPECT_NEAR(r.per_class[1].precision, 0.75, 1e-12);
  EXPECT_NEAR(r.per_class[1].recall, 0.6, 1e-12);
  EXPECT_NEAR(r.per_class[1].f1, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.macro_f1, 0.696969696969697, 1e-9);
  EXPECT_EQ(r.per_class[1].support, 10u);
}

TEST(Report, PerfectDiagonal) {
  const auto r = compute_report(ConfusionMatrix({"a", "b", "c"}, {5, 0, 0, 0, 7, 0, 0, 0, 1}));
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.macro_precision, 1.0);
  EXPECT_EQ(r.macro_recall, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
  EXPECT_EQ(r.weighted_f1, 1.0);
}

TEST(Report, NeverPredictedClass) {
  const auto r = compute_report(ConfusionMatrix({"a", "b"}, {5, 0, 3, 0}));
  EXPECT_EQ(r.per_class[1].precision, 0.0);
  EXPECT_EQ(r.per_class[1].f1, 0.0);
  EXPECT_TRUE(std::isfinite(r.macro_f1));
  EXPECT_NEAR(r.macro_f1, (2 * (5.0 / 8) / (5.0 / 8 + 1)) / 2, 1e-12);
}

TEST(Report, EmptyMatrixRejected) {
  EXPECT_THROW(compute_report(ConfusionMatrix({"a"}, {0})), InvalidArgument);
  EXPECT_THROW(compute_report(ConfusionMatrix()), InvalidArgument);
}

TEST(Report, WeightedAverage) {
  const auto r = compute_report(ConfusionMatrix({"0", "1"}, {8, 2, 4, 6}));
  EXPECT_NEAR(r.weighted_f1, 0.5 * 0.7272727272727273 + 0.5 * (2.0 / 3.0), 1e-12);
  EXPECT_EQ(f1_of(r, Averaging::macro), r.macro_f1);
  EXPECT_EQ(f1_of(r, Averaging::weighted), r.weighted_f1);
}

TEST(Report, MatchesBruteForceExactly) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + rng.below(10);
    std::vector<std::vector<std::uint64_t>> m(k, std::vector<std::uint64_t>(k));
    for (auto& row : m)
      for (auto& v : row) v = rng.below(3) == 0 ? 0 : rng.below(50);
    m[0][0] += 1;
    const auto rep = compute_report(to_cm(m));
    const auto b = brute_report(m);
    ASSERT_EQ(rep.accuracy, b.accuracy);
    ASSERT_EQ(rep.macro_precision, b.macro_p);
    ASSERT_EQ(rep.macro_recall, b.macro_r);
    ASSERT_EQ(rep.macro_f1, b.macro_f1);
    for (std::size_t c = 0; c < k; ++c) {
      ASSERT_EQ(rep.per_class[c].precision, b.p[c]);
      ASSERT_EQ(rep.per_class[c].recall, b.r[c]);
      ASSERT_EQ(rep.per_class[c].f1, b.f1[c]);
    }
  }
}

TEST(Aggregate, Means) {
  std::vector<RunRecord> runs(3);
  runs[0] = {"m", "d1", Phase::tl, {}, 10};
  runs[0].report.accuracy = 0.8;
  runs[1] = {"m", "d2", Phase::tl, {}, 20};
  runs[1].report.accuracy = 0.9;
  runs[2] = {"n", "d1", Phase::tl, {}, 5};
  runs[2].report.accuracy = 0.7;
  const auto g = aggregate_mean(runs, GroupBy::model);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].key, "m");
  EXPECT_NEAR(g[0].accuracy, 0.85, 1e-15);
  EXPECT_EQ(g[0].best_epoch, 15);
  EXPECT_EQ(g[1].accuracy, 0.7);
  const auto d = aggregate_mean(runs, GroupBy::dataset);
  EXPECT_EQ(d[0].runs, 2u);
  EXPECT_THROW(aggregate_mean({}, GroupBy::model), InvalidArgument);
}

TEST(Aggregate, BenchmarkMeansMatchPublishedTable) {
  const auto rows = load_benchmark_csv(fixtures::data_path("fixtures/benchmark_results.csv"));
  ASSERT_EQ(rows.size(), 414u);
  const auto runs = to_run_records(rows);
  const auto tl = aggregate_mean(select_phase(runs, Phase::tl), GroupBy::model);
  const auto ft = aggregate_mean(select_phase(runs, Phase::ft), GroupBy::model);
  std::map<std::string, GroupMean> tl_by, ft_by;
  for (const auto& g : tl) tl_by[g.key] = g;
  for (const auto& g : ft) ft_by[g.key] = g;
  // 4-decimal publication plus 5-decimal inputs
  const double tol = 5e-5 + 5e-6;
  const auto expected = fixtures::read_csv("fixtures/model_means.csv");
  ASSERT_EQ(expected.size(), 23u);
  for (const auto& e : expected) {
    const auto& t = tl_by.at(e[0]);
    const auto& f = ft_by.at(e[0]);
    EXPECT_EQ(t.runs, 18u);
    EXPECT_NEAR(t.accuracy, std::stod(e[1]), tol) << e[0];
    EXPECT_NEAR(t.macro_f1, std::stod(e[2]), tol) << e[0];
    EXPECT_NEAR(t.best_epoch, std::stod(e[3]), tol) << e[0];
    EXPECT_NEAR(f.accuracy, std::stod(e[4]), tol) << e[0];
    EXPECT_NEAR(f.macro_f1, std::stod(e[5]), tol) << e[0];
    EXPECT_NEAR(f.best_epoch, std::stod(e[6]), tol) << e[0];
  }
}

TEST(Rank, FractionalTies) {
  const auto t = rank_by_value({{"a", 0.9}, {"b", 0.9}, {"c", 0.5}}, true);
  EXPECT_EQ(t.rows[0].rank, 1.5);
  EXPECT_EQ(t.rows[1].rank, 1.5);
  EXPECT_EQ(t.rows[2].rank, 3.0);
  EXPECT_EQ(t.rows[0].name, "a");
  const auto one = rank_by_value({{"solo", 0.1}}, true);
  EXPECT_EQ(one.rows[0].rank, 1.0);
  EXPECT_THROW(rank_by_value({{"x", NAN}}, true), InvalidArgument);
}

TEST(Rank, AscendingOrder) {
  const auto t = rank_by_value({{"a", 3}, {"b", 1}, {"c", 2}}, false);
  EXPECT_EQ(t.rows[0].name, "b");
  EXPECT_EQ(t.rows[2].name, "a");
}

TEST(Rank, PublishedAverageAccuracyOrder) {
  std::vector<std::pair<std::string, double>> entries;
  for (const auto& e : fixtures::read_csv("fixtures/model_means.csv")) entries.emplace_back(e[0], std::stod(e[4]));
  const auto t = rank_by_value(entries, true);
  const auto expected = fixtures::read_csv("fixtures/rankings_expected.csv");
  ASSERT_EQ(t.rows.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_EQ(t.rows[i].name, expected[i][1]) << i;
    EXPECT_LE(std::abs(t.rows[i].rank - std::stod(expected[i][0])), 0.5) << expected[i][1];
  }
  EXPECT_EQ(t.rows.front().name, "ConvNeXtTiny");
  EXPECT_EQ(t.rows[1].name, "EfficientNetV2B0");
  EXPECT_EQ(t.rows.back().name, "InceptionV3");
  EXPECT_EQ(t.rows.back().rank, 23.0);
  // DenseNet169 and DenseNet121 tie at 0.8761
  EXPECT_EQ(t.rows[10].rank, 11.5);
  EXPECT_EQ(t.rows[11].rank, 11.5);
}

TEST(Rank, PublishedAverageRank) {
  std::vector<std::pair<std::string, std::vector<double>>> per;
  for (const auto& row : fixtures::read_csv("fixtures/dataset_ranks.csv")) {
    std::vector<double> ranks;
    for (std::size_t i = 1; i < row.size(); ++i) ranks.push_back(std::stod(row[i]));
    per.emplace_back(row[0], ranks);
  }
  ASSERT_EQ(per.size(), 23u);
  for (const auto& [name, r] : per) EXPECT_EQ(r.size(), 18u) << name;
  const auto t = average_rank(per);
  const auto expected = fixtures::read_csv("fixtures/rankings_expected.csv");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_EQ(t.rows[i].name, expected[i][4]);
    EXPECT_EQ(t.rows[i].rank, std::stod(expected[i][3]));
    EXPECT_NEAR(t.rows[i].score, std::stod(expected[i][5]), 1e-4) << expected[i][4];
  }
  EXPECT_EQ(t.rows[0].name, "EfficientNetV2B2");
  EXPECT_NEAR(t.rows[0].score, 6.4444, 1e-4);
}

TEST(Rank, AverageRankEdgeCases) {
  const auto same = average_rank({{"a", {1, 2}}, {"b", {1, 2}}, {"c", {1, 2}}});
  for (const auto& r : same.rows) {
    EXPECT_EQ(r.score, 1.5);
    EXPECT_EQ(r.rank, 2.0);
  }
  const auto single = average_rank({{"a", {3}}, {"b", {1}}});
  EXPECT_EQ(single.rows[0].name, "b");
  EXPECT_EQ(single.rows[0].score, 1.0);
  EXPECT_THROW(average_rank({{"a", {1, 2}}, {"b", {1}}}), ValidationError);
  EXPECT_THROW(average_rank({{"a", {}}}), ValidationError);
}

TEST(Rank, PerDatasetFromRuns) {
  std::vector<RunRecord> runs;
  auto add = [&](std::string m, std::string d, double acc) {
    RunRecord r{m, d, Phase::ft, {}, 1};
    r.report.accuracy = acc;
    runs.push_back(r);
  };
  add("a", "x", 0.9);
  add("b", "x", 0.8);
  add("a", "y", 0.5);
  add("b", "y", 0.7);
  const auto per = ranks_per_dataset(runs);
  ASSERT_EQ(per.size(), 2u);
  EXPECT_EQ(per[0].first, "a");
  EXPECT_EQ(per[0].second, (std::vector<double>{1, 2}));
  EXPECT_EQ(per[1].second, (std::vector<double>{2, 1}));
}

TEST(Io, BenchmarkCsvRoundTrip) {
  std::vector<BenchmarkRow> rows(1);
  rows[0] = {"M", "D", 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 12.5, 3};
  std::stringstream ss;
  write_benchmark_csv(ss, rows);
  EXPECT_EQ(ss.str(), std::string(kBenchmarkHeader) + "\nM,D,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,12.5,3\n");
  const auto back = read_benchmark_csv(ss);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].best_epoch, 12.5);
  EXPECT_EQ(back[0].f1_sd_ft, 0.8);
  std::stringstream bad(std::string(kBenchmarkHeader) + "\nM,D,0.1\n");
  try {
    read_benchmark_csv(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 2u);
  }
}

TEST(Io, RankingOutputs) {
  const auto t = rank_by_value({{"alpha", 0.9}, {"b", 0.85}}, true);
  std::stringstream csv;
  write_ranking_csv(csv, t);
  EXPECT_EQ(csv.str(), "rank,name,average_metric\n1,alpha,0.9\n2,b,0.85\n");
  std::stringstream board;
  write_leaderboard(board, t, "By accuracy");
  EXPECT_EQ(board.str(), "By accuracy\nRank  Model  Average\n1     alpha  0.9000\n2     b      0.8500\n");
}

TEST(Io, RunsJsonl) {
  RunRecord r{"m", "d", Phase::ft, {}, 7};
  r.report.accuracy = 0.5;
  r.report.macro_f1 = 0.25;
  std::stringstream ss;
  ss << to_json(r).dump() << "\n";
  const auto back = read_runs_jsonl(ss);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].phase, Phase::ft);
  EXPECT_EQ(back[0].best_epoch, 7);
  EXPECT_EQ(back[0].report.macro_f1, 0.25);
}
