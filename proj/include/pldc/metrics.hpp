#pragma once

// Classification metrics and benchmark aggregation / ranking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pldc/errors.hpp"
#include "pldc/text.hpp"

namespace pldc::metrics {

// Rows are true classes, columns are predicted classes.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> labels)
      : labels_(std::move(labels)), counts_(labels_.size() * labels_.size(), 0) {}

  ConfusionMatrix(std::vector<std::string> labels, std::vector<std::uint64_t> counts)
      : labels_(std::move(labels)), counts_(std::move(counts)) {
    if (counts_.size() != labels_.size() * labels_.size()) {
      throw DimensionError("ConfusionMatrix: counts must be K x K");
    }
  }

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * size() + pred]; }
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * size() + pred]; }

  std::uint64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < size(); ++i) t += at(i, i);
    return t;
  }
  std::uint64_t row_sum(std::size_t r) const {
    std::uint64_t s = 0;
    for (std::size_t c = 0; c < size(); ++c) s += at(r, c);
    return s;
  }
  std::uint64_t col_sum(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t r = 0; r < size(); ++r) s += at(r, c);
    return s;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::vector<std::string> labels_;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix confusion_from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs,
                                            const std::vector<std::string>& labels) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!index.emplace(labels[i], i).second) throw InvalidArgument("duplicate label '" + labels[i] + "'");
  }
  ConfusionMatrix cm(labels);
  auto lookup = [&](const std::string& l) {
    auto it = index.find(l);
    if (it == index.end()) throw ValidationError("unknown label '" + l + "'");
    return it->second;
  };
  for (const auto& [truth, pred] : pairs) ++cm.at(lookup(truth), lookup(pred));
  return cm;
}

struct ClassMetrics {
  std::string label;
  double precision = 0, recall = 0, f1 = 0;
  std::uint64_t support = 0;
};

struct MetricReport {
  double accuracy = 0;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  // Support-weighted counterparts; macro is the headline average.
  double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;
  std::vector<ClassMetrics> per_class;
};

enum class Averaging { macro, weighted };

inline double f1_of(const MetricReport& r, Averaging a) { return a == Averaging::macro ? r.macro_f1 : r.weighted_f1; }

inline double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

/// Per-class precision/recall/F1 with 0 for empty denominators; macro values
/// are unweighted class means.
inline MetricReport compute_report(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (cm.size() == 0 || total == 0) throw InvalidArgument("compute_report: empty confusion matrix");
  MetricReport rep;
  rep.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  for (std::size_t c = 0; c < cm.size(); ++c) {
    ClassMetrics m;
    m.label = cm.labels()[c];
    const double tp = static_cast<double>(cm.at(c, c));
    m.support = cm.row_sum(c);
    m.precision = safe_div(tp, static_cast<double>(cm.col_sum(c)));
    m.recall = safe_div(tp, static_cast<double>(m.support));
    m.f1 = safe_div(2.0 * m.precision * m.recall, m.precision + m.recall);
    rep.per_class.push_back(m);
  }
  const double k = static_cast<double>(cm.size());
  for (const auto& m : rep.per_class) {
    rep.macro_precision += m.precision;
    rep.macro_recall += m.recall;
    rep.macro_f1 += m.f1;
    const double w = static_cast<double>(m.support) / static_cast<double>(total);
    rep.weighted_precision += w * m.precision;
    rep.weighted_recall += w * m.recall;
    rep.weighted_f1 += w * m.f1;
  }
  rep.macro_precision /= k;
  rep.macro_recall /= k;
  rep.macro_f1 /= k;
  return rep;
}

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["macro_precision"] = r.macro_precision;
  j["macro_recall"] = r.macro_recall;
  j["macro_f1"] = r.macro_f1;
  j["weighted_f1"] = r.weighted_f1;
  auto& pc = j["per_class"] = nlohmann::ordered_json::array();
  for (const auto& m : r.per_class) {
    pc.push_back({{"label", m.label}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// Run records and aggregation

enum class Phase { tl, ft };

inline const char* to_string(Phase p) { return p == Phase::tl ? "tl" : "ft"; }
inline Phase parse_phase(const std::string& s) {
  if (s == "tl") return Phase::tl;
  if (s == "ft") return Phase::ft;
  throw ParseError("unknown phase '" + s + "'");
}

struct RunRecord {
  std::string model;
  std::string dataset;
  Phase phase = Phase::tl;
  MetricReport report;
  double best_epoch = 1;  // averaged fixtures carry fractional epochs
};

enum class GroupBy { model, dataset };

struct GroupMean {
  std::string key;
  std::size_t runs = 0;
  double accuracy = 0, macro_precision = 0, macro_recall = 0, macro_f1 = 0, best_epoch = 0;
};

/// Arithmetic mean per group, groups ordered by key.
inline std::vector<GroupMean> aggregate_mean(const std::vector<RunRecord>& runs, GroupBy by) {
  if (runs.empty()) throw InvalidArgument("aggregate_mean: no runs");
  std::map<std::string, GroupMean> groups;
  for (const auto& r : runs) {
    const auto& key = by == GroupBy::model ? r.model : r.dataset;
    auto& g = groups[key];
    g.key = key;
    ++g.runs;
    g.accuracy += r.report.accuracy;
    g.macro_precision += r.report.macro_precision;
    g.macro_recall += r.report.macro_recall;
    g.macro_f1 += r.report.macro_f1;
    g.best_epoch += r.best_epoch;
  }
  std::vector<GroupMean> out;
  for (auto& [_, g] : groups) {
    const double n = static_cast<double>(g.runs);
    g.accuracy /= n;
    g.macro_precision /= n;
    g.macro_recall /= n;
    g.macro_f1 /= n;
    g.best_epoch /= n;
    out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rankings

enum class RankMethod { by_avg_metric, by_avg_rank };

struct RankRow {
  std::string name;
  double score = 0;
  double rank = 0;
};

struct RankingTable {
  RankMethod method = RankMethod::by_avg_metric;
  std::vector<RankRow> rows;  // best first
};

/// Ranks 1..M by score; tied scores share the mean of their positions.
/// Input order is kept among ties.
inline RankingTable rank_by_value(const std::vector<std::pair<std::string, double>>& entries, bool descending) {
  for (const auto& [name, s] : entries) {
    if (!std::isfinite(s)) throw InvalidArgument("rank_by_value: non-finite score for '" + name + "'");
  }
  RankingTable t;
  for (const auto& [name, s] : entries) t.rows.push_back({name, s, 0});
  std::stable_sort(t.rows.begin(), t.rows.end(), [descending](const RankRow& a, const RankRow& b) {
    return descending ? a.score > b.score : a.score < b.score;
  });
  for (std::size_t i = 0; i < t.rows.size();) {
    std::size_t j = i;
    while (j < t.rows.size() && t.rows[j].score == t.rows[i].score) ++j;
    const double mean_pos = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) t.rows[k].rank = mean_pos;
    i = j;
  }
  return t;
}

/// Mean of each model's per-dataset ranks, ranked ascending.
inline RankingTable average_rank(const std::vector<std::pair<std::string, std::vector<double>>>& per_dataset_ranks) {
  std::vector<std::pair<std::string, double>> means;
  std::optional<std::size_t> width;
  for (const auto& [model, ranks] : per_dataset_ranks) {
    if (ranks.empty()) throw ValidationError("average_rank: model '" + model + "' has no ranks");
    if (width && *width != ranks.size()) {
      throw ValidationError("average_rank: model '" + model + "' has " + std::to_string(ranks.size()) +
                            " ranks, expected " + std::to_string(*width));
    }
    width = ranks.size();
    means.emplace_back(model, std::accumulate(ranks.begin(), ranks.end(), 0.0) / static_cast<double>(ranks.size()));
  }
  auto t = rank_by_value(means, false);
  t.method = RankMethod::by_avg_rank;
  return t;
}

/// Per-dataset ranks (by descending accuracy) for every model, datasets in
/// sorted order. Every model must have exactly one run per dataset.
inline std::vector<std::pair<std::string, std::vector<double>>> ranks_per_dataset(const std::vector<RunRecord>& runs) {
  std::map<std::string, std::vector<std::pair<std::string, double>>> by_dataset;
  std::vector<std::string> models;
  for (const auto& r : runs) {
    by_dataset[r.dataset].emplace_back(r.model, r.report.accuracy);
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
  }
  std::map<std::string, std::vector<double>> ranks;
  for (const auto& [ds, entries] : by_dataset) {
    for (const auto& row : rank_by_value(entries, true).rows) ranks[row.name].push_back(row.rank);
  }
  std::vector<std::pair<std::string, std::vector<double>>> out;
  for (const auto& m : models) out.emplace_back(m, ranks[m]);
  return out;
}

inline void write_ranking_csv(std::ostream& os, const RankingTable& t) {
  os << "rank,name," << (t.method == RankMethod::by_avg_rank ? "average_rank" : "average_metric") << '\n';
  for (const auto& r : t.rows) os << text::fmt_real(r.rank) << ',' << r.name << ',' << text::fmt_real(r.score) << '\n';
}

/// Fixed-width leaderboard, scores to 4 decimals.
inline void write_leaderboard(std::ostream& os, const RankingTable& t, const std::string& title) {
  std::size_t width = 5;
  for (const auto& r : t.rows) width = std::max(width, r.name.size());
  os << title << '\n';
  os << std::left << std::setw(6) << "Rank" << std::setw(static_cast<int>(width) + 2) << "Model"
     << (t.method == RankMethod::by_avg_rank ? "Average Rank" : "Average") << '\n';
  for (const auto& r : t.rows) {
    std::ostringstream rank;
    rank << r.rank;
    os << std::left << std::setw(6) << rank.str() << std::setw(static_cast<int>(width) + 2) << r.name << std::fixed
       << std::setprecision(4) << r.score << std::defaultfloat << '\n';
  }
}

// ---------------------------------------------------------------------------
// Benchmark results CSV: one row per (model, dataset) with TL and FT columns.

struct BenchmarkRow {
  std::string model, dataset;
  double acc = 0, f1 = 0, acc_sd = 0, f1_sd = 0;
  double acc_ft = 0, f1_ft = 0, acc_sd_ft = 0, f1_sd_ft = 0;
  double best_epoch = 0, best_epoch_ft = 0;
};

inline constexpr const char* kBenchmarkHeader =
    "model,dataset,acc,f1,acc_sd,f1_sd,acc_ft,f1_ft,acc_sd_ft,f1_sd_ft,best_epoch,best_epoch_ft";

inline void write_benchmark_csv(std::ostream& os, const std::vector<BenchmarkRow>& rows) {
  using text::fmt_real;
  os << kBenchmarkHeader << '\n';
  for (const auto& r : rows) {
    os << r.model << ',' << r.dataset << ',' << fmt_real(r.acc) << ',' << fmt_real(r.f1) << ',' << fmt_real(r.acc_sd)
       << ',' << fmt_real(r.f1_sd) << ',' << fmt_real(r.acc_ft) << ',' << fmt_real(r.f1_ft) << ','
       << fmt_real(r.acc_sd_ft) << ',' << fmt_real(r.f1_sd_ft) << ',' << fmt_real(r.best_epoch) << ','
       << fmt_real(r.best_epoch_ft) << '\n';
  }
}

inline std::vector<BenchmarkRow> read_benchmark_csv(std::istream& is) {
  std::vector<BenchmarkRow> rows;
  std::string line;
  std::size_t lineno = 0;
  bool header = true;
  while (std::getline(is, line)) {
    ++lineno;
    if (text::blank(line)) continue;
    if (header) {
      header = false;
      if (line.rfind("model,", 0) == 0) continue;
    }
    const auto cells = text::split_csv(line);
    if (cells.size() != 12) throw ParseError("expected 12 columns, got " + std::to_string(cells.size()), lineno);
    try {
      BenchmarkRow r;
      r.model = cells[0];
      r.dataset = cells[1];
      double* fields[] = {&r.acc,    &r.f1,        &r.acc_sd,   &r.f1_sd,      &r.acc_ft,
                          &r.f1_ft,  &r.acc_sd_ft, &r.f1_sd_ft, &r.best_epoch, &r.best_epoch_ft};
      for (std::size_t i = 0; i < 10; ++i) *fields[i] = text::parse_real(cells[i + 2]);
      rows.push_back(r);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return rows;
}

inline std::vector<BenchmarkRow> load_benchmark_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_benchmark_csv(in);
}

/// Two RunRecords (tl, ft) per benchmark row; only accuracy and macro F1 are known.
inline std::vector<RunRecord> to_run_records(const std::vector<BenchmarkRow>& rows) {
  std::vector<RunRecord> runs;
  for (const auto& b : rows) {
    RunRecord tl{b.model, b.dataset, Phase::tl, {}, b.best_epoch};
    tl.report.accuracy = b.acc;
    tl.report.macro_f1 = b.f1;
    RunRecord ft{b.model, b.dataset, Phase::ft, {}, b.best_epoch_ft};
    ft.report.accuracy = b.acc_ft;
    ft.report.macro_f1 = b.f1_ft;
    runs.push_back(std::move(tl));
    runs.push_back(std::move(ft));
  }
  return runs;
}

inline std::vector<RunRecord> select_phase(const std::vector<RunRecord>& runs, Phase p) {
  std::vector<RunRecord> out;
  std::copy_if(runs.begin(), runs.end(), std::back_inserter(out), [p](const RunRecord& r) { return r.phase == p; });
  return out;
}

// RunRecord JSON Lines: {model, dataset, phase, best_epoch, accuracy, macro_precision, macro_recall, macro_f1}
inline nlohmann::ordered_json to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["model"] = r.model;
  j["dataset"] = r.dataset;
  j["phase"] = to_string(r.phase);
  j["best_epoch"] = r.best_epoch;
  j["accuracy"] = r.report.accuracy;
  j["macro_precision"] = r.report.macro_precision;
  j["macro_recall"] = r.report.macro_recall;
  j["macro_f1"] = r.report.macro_f1;
  return j;
}

inline RunRecord run_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.model = j.at("model");
  r.dataset = j.at("dataset");
  r.phase = parse_phase(j.at("phase"));
  r.best_epoch = j.at("best_epoch");
  r.report.accuracy = j.at("accuracy");
  r.report.macro_precision = j.value("macro_precision", 0.0);
  r.report.macro_recall = j.value("macro_recall", 0.0);
  r.report.macro_f1 = j.value("macro_f1", 0.0);
  return r;
}

inline std::vector<RunRecord> read_runs_jsonl(std::istream& is) {
  std::vector<RunRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (text::blank(line)) continue;
    try {
      out.push_back(run_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return out;
}

}  // namespace pldc::metrics
