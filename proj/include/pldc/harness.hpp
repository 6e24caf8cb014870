#pragma once

// Transfer-learning / fine-tuning control loop over an abstract trainer.
//
// Phase 1 freezes the feature extractor and trains the head, phase 2 unfreezes
// everything. Each phase trains with early stopping, restores the best
// checkpoint and evaluates on train, val and test. Epochs count from 1 in each
// phase.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pldc/errors.hpp"
#include "pldc/manifest.hpp"
#include "pldc/metrics.hpp"

namespace pldc::harness {

enum class Monitor { val_loss, val_accuracy };
enum class Mode { min, max };

inline const char* to_string(Monitor m) { return m == Monitor::val_loss ? "val_loss" : "val_accuracy"; }

inline Monitor parse_monitor(const std::string& s) {
  if (s == "val_loss") return Monitor::val_loss;
  if (s == "val_accuracy" || s == "val_acc") return Monitor::val_accuracy;
  throw ParseError("unknown monitor '" + s + "'");
}

inline Mode mode_of(Monitor m) { return m == Monitor::val_loss ? Mode::min : Mode::max; }

struct ExperimentConfig {
  int tl_epochs = 200;
  int ft_epochs = 200;
  std::optional<int> patience = 50;  // nullopt: no early stopping
  Monitor monitor = Monitor::val_loss;
  bool frozen_first = true;
};

inline void validate(const ExperimentConfig& c) {
  if (c.tl_epochs < 1 || c.ft_epochs < 1) throw ValidationError("epochs must be >= 1");
  if (c.patience && *c.patience < 0) throw ValidationError("patience must be >= 0");
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("experiment config must be a JSON object");
  ExperimentConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "tl_epochs") {
      c.tl_epochs = v.get<int>();
    } else if (key == "ft_epochs") {
      c.ft_epochs = v.get<int>();
    } else if (key == "patience") {
      c.patience = v.is_null() ? std::nullopt : std::optional<int>(v.get<int>());
    } else if (key == "monitor") {
      c.monitor = parse_monitor(v.get<std::string>());
    } else if (key == "frozen_first") {
      c.frozen_first = v.get<bool>();
    } else {
      throw ParseError("unknown config key '" + key + "'");
    }
  }
  validate(c);
  return c;
}

inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["tl_epochs"] = c.tl_epochs;
  j["ft_epochs"] = c.ft_epochs;
  j["patience"] = c.patience ? nlohmann::ordered_json(*c.patience) : nlohmann::ordered_json(nullptr);
  j["monitor"] = to_string(c.monitor);
  j["frozen_first"] = c.frozen_first;
  return j;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

inline double monitored(const EpochMetrics& m, Monitor mon) { return mon == Monitor::val_loss ? m.val_loss : m.val_acc; }

// ---------------------------------------------------------------------------
// Rules

namespace detail {

inline bool improves(double candidate, double best, Mode mode) {
  return mode == Mode::min ? candidate < best : candidate > best;
}

// Index of the first strict best; NaN never counts as an improvement.
inline std::size_t best_index(const std::vector<double>& values, Mode mode) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (std::isnan(values[best]) ? !std::isnan(values[i]) : improves(values[i], values[best], mode)) best = i;
  }
  return best;
}

}  // namespace detail

enum class StopDecision { keep_going, stop };

/// Stops once `patience` epochs have passed without a strict improvement
/// over the best value (patience 0: the first non-improving epoch stops).
inline StopDecision early_stop_step(const std::vector<double>& history, int patience, Mode mode) {
  if (patience < 0) throw InvalidArgument("early_stop_step: patience < 0");
  if (history.empty()) throw InvalidArgument("early_stop_step: empty history");
  const auto best = detail::best_index(history, mode);
  const auto latest = history.size() - 1;
  return latest > best && latest - best >= static_cast<std::size_t>(patience) ? StopDecision::stop
                                                                              : StopDecision::keep_going;
}

/// Epoch number of the best monitored value; the earliest one wins ties.
inline int select_best_epoch(const std::vector<EpochMetrics>& log, Monitor mon) {
  if (log.empty()) throw InvalidArgument("select_best_epoch: empty log");
  std::vector<double> values;
  for (const auto& m : log) values.push_back(monitored(m, mon));
  return log[detail::best_index(values, mode_of(mon))].epoch;
}

// ---------------------------------------------------------------------------
// Trainer contract

using Token = std::string;

class Trainer {
 public:
  virtual ~Trainer() = default;
  virtual void set_frozen(bool frozen) = 0;
  virtual EpochMetrics train_one_epoch() = 0;
  virtual Token snapshot() = 0;
  virtual void restore(const Token& token) = 0;
  virtual metrics::MetricReport evaluate(Split split) = 0;
};

struct TrainerFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Log

struct PhaseLog {
  metrics::Phase phase = metrics::Phase::tl;
  bool frozen = true;
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;
  bool early_stopped = false;
  Token restored;
  metrics::MetricReport train, val, test;
};

struct ExperimentLog {
  ExperimentConfig config;
  std::vector<PhaseLog> phases;

  const PhaseLog* find(metrics::Phase p) const {
    for (const auto& ph : phases) {
      if (ph.phase == p) return &ph;
    }
    return nullptr;
  }
};

inline nlohmann::ordered_json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"train_loss", m.train_loss},
          {"train_acc", m.train_acc},
          {"val_loss", m.val_loss},
          {"val_acc", m.val_acc}};
}

inline nlohmann::ordered_json to_json(const ExperimentLog& log) {
  nlohmann::ordered_json j;
  j["config"] = to_json(log.config);
  j["phases"] = nlohmann::ordered_json::array();
  for (const auto& ph : log.phases) {
    nlohmann::ordered_json p;
    p["phase"] = metrics::to_string(ph.phase);
    p["frozen"] = ph.frozen;
    p["best_epoch"] = ph.best_epoch;
    p["early_stopped"] = ph.early_stopped;
    p["restored"] = ph.restored;
    p["epochs"] = nlohmann::ordered_json::array();
    for (const auto& m : ph.epochs) p["epochs"].push_back(to_json(m));
    if (!ph.restored.empty()) {
      p["train"] = metrics::to_json(ph.train);
      p["val"] = metrics::to_json(ph.val);
      p["test"] = metrics::to_json(ph.test);
    }
    j["phases"].push_back(std::move(p));
  }
  return j;
}

/// Thrown by run_experiment when the trainer fails; carries the epochs completed so far.
struct ExperimentAborted : std::runtime_error {
  ExperimentAborted(const std::string& what, ExperimentLog partial)
      : std::runtime_error(what), log(std::move(partial)) {}
  ExperimentLog log;
};

// ---------------------------------------------------------------------------
// Control loop

namespace detail {

inline void run_phase(Trainer& trainer, PhaseLog& ph, int max_epochs, const ExperimentConfig& cfg) {
  const Mode mode = mode_of(cfg.monitor);
  trainer.set_frozen(ph.frozen);
  std::vector<double> history;
  Token best_token;
  for (int e = 1; e <= max_epochs; ++e) {
    auto m = trainer.train_one_epoch();
    m.epoch = e;
    ph.epochs.push_back(m);
    history.push_back(monitored(m, cfg.monitor));
    if (best_index(history, mode) == history.size() - 1) {
      best_token = trainer.snapshot();
      ph.best_epoch = e;
    }
    if (cfg.patience && early_stop_step(history, *cfg.patience, mode) == StopDecision::stop) {
      ph.early_stopped = e < max_epochs;
      break;
    }
  }
  trainer.restore(best_token);
  ph.restored = best_token;
  ph.train = trainer.evaluate(Split::train);
  ph.val = trainer.evaluate(Split::val);
  ph.test = trainer.evaluate(Split::test);
}

}  // namespace detail

inline ExperimentLog run_experiment(Trainer& trainer, const ExperimentConfig& cfg) {
  validate(cfg);
  ExperimentLog log{cfg, {}};
  struct Plan {
    metrics::Phase phase;
    bool frozen;
    int epochs;
  };
  std::vector<Plan> plan;
  if (cfg.frozen_first) plan.push_back({metrics::Phase::tl, true, cfg.tl_epochs});
  plan.push_back({metrics::Phase::ft, false, cfg.ft_epochs});

  for (const auto& p : plan) {
    log.phases.push_back(PhaseLog{p.phase, p.frozen, {}, 0, false, {}, {}, {}, {}});
    try {
      detail::run_phase(trainer, log.phases.back(), p.epochs, cfg);
    } catch (const std::exception& e) {
      auto& ph = log.phases.back();
      throw ExperimentAborted(std::string("experiment aborted in ") + metrics::to_string(p.phase) + " phase after " +
                                  std::to_string(ph.epochs.size()) + " completed epochs: " + e.what(),
                              log);
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// Scripted trainer
//
// Fixture: a JSON list of per-epoch quadruples [train_loss, train_acc,
// val_loss, val_acc] (or objects with those keys) replayed in each phase, or
// an object {"tl": [...], "ft": [...]} with one script per phase. Tokens are
// "<phase>@<epoch>". evaluate() reports the restored epoch's train_acc for the
// train split and val_acc otherwise, as both accuracy and macro F1.

class ScriptedTrainer : public Trainer {
 public:
  ScriptedTrainer(std::vector<EpochMetrics> tl, std::vector<EpochMetrics> ft)
      : scripts_{std::move(tl), std::move(ft)} {}

  explicit ScriptedTrainer(const std::vector<EpochMetrics>& both) : ScriptedTrainer(both, both) {}

  static ScriptedTrainer from_json(const nlohmann::json& j) {
    if (j.is_array()) return ScriptedTrainer(parse_script(j));
    if (j.is_object() && j.contains("tl") && j.contains("ft")) {
      return ScriptedTrainer(parse_script(j["tl"]), parse_script(j["ft"]));
    }
    throw ParseError("mock trainer script must be a list or an object with 'tl' and 'ft'");
  }

  static ScriptedTrainer load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }

  /// Makes train_one_epoch throw at the given epoch of the given phase.
  void fail_at(metrics::Phase phase, int epoch) { fail_ = {phase, epoch}; }

  void set_frozen(bool frozen) override {
    trace_.push_back(frozen ? "freeze" : "unfreeze");
    phase_ = frozen ? metrics::Phase::tl : metrics::Phase::ft;
    epoch_ = 0;
  }

  EpochMetrics train_one_epoch() override {
    trace_.push_back("train");
    const auto& s = script();
    if (fail_ && fail_->first == phase_ && fail_->second == epoch_ + 1) {
      throw TrainerFailure("scripted failure at epoch " + std::to_string(epoch_ + 1));
    }
    if (static_cast<std::size_t>(epoch_) >= s.size()) {
      throw TrainerFailure("script exhausted after " + std::to_string(s.size()) + " epochs");
    }
    auto m = s[static_cast<std::size_t>(epoch_)];
    m.epoch = ++epoch_;
    current_ = m;
    return m;
  }

  Token snapshot() override {
    Token t = std::string(metrics::to_string(phase_)) + "@" + std::to_string(epoch_);
    trace_.push_back("snapshot " + t);
    return t;
  }

  void restore(const Token& token) override {
    trace_.push_back("restore " + token);
    const auto at = token.find('@');
    if (at == Token::npos) throw TrainerFailure("bad token '" + token + "'");
    const auto phase = metrics::parse_phase(token.substr(0, at));
    const int epoch = std::stoi(token.substr(at + 1));
    const auto& s = scripts_[phase == metrics::Phase::tl ? 0 : 1];
    if (epoch < 1 || static_cast<std::size_t>(epoch) > s.size()) throw TrainerFailure("bad token '" + token + "'");
    current_ = s[static_cast<std::size_t>(epoch - 1)];
    current_.epoch = epoch;
  }

  metrics::MetricReport evaluate(Split split) override {
    trace_.push_back(std::string("evaluate ") + to_string(split));
    metrics::MetricReport r;
    r.accuracy = split == Split::train ? current_.train_acc : current_.val_acc;
    r.macro_f1 = r.accuracy;
    return r;
  }

  const std::vector<std::string>& trace() const { return trace_; }

 private:
  static std::vector<EpochMetrics> parse_script(const nlohmann::json& j) {
    if (!j.is_array()) throw ParseError("mock trainer script must be a list");
    std::vector<EpochMetrics> out;
    int e = 0;
    for (const auto& row : j) {
      EpochMetrics m;
      m.epoch = ++e;
      if (row.is_array()) {
        if (row.size() != 4) throw ParseError("epoch " + std::to_string(e) + ": expected 4 values");
        m.train_loss = row[0].get<double>();
        m.train_acc = row[1].get<double>();
        m.val_loss = row[2].get<double>();
        m.val_acc = row[3].get<double>();
      } else {
        m.train_loss = row.at("train_loss").get<double>();
        m.train_acc = row.at("train_acc").get<double>();
        m.val_loss = row.at("val_loss").get<double>();
        m.val_acc = row.at("val_acc").get<double>();
      }
      out.push_back(m);
    }
    return out;
  }

  const std::vector<EpochMetrics>& script() const { return scripts_[phase_ == metrics::Phase::tl ? 0 : 1]; }

  std::vector<EpochMetrics> scripts_[2];
  metrics::Phase phase_ = metrics::Phase::tl;
  int epoch_ = 0;
  EpochMetrics current_;
  std::optional<std::pair<metrics::Phase, int>> fail_;
  std::vector<std::string> trace_;
};

// ---------------------------------------------------------------------------
// Results

struct LabeledLog {
  std::string model;
  std::string dataset;
  ExperimentLog log;
};

namespace detail {

struct Stats {
  double mean = 0, sd = 0;
};

// Population standard deviation (divides by n).
inline Stats stats(const std::vector<double>& xs) {
  if (xs.empty()) return {};
  double sum = 0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size()))};
}

}  // namespace detail

/// One row per (model, dataset) in first-seen order: test accuracy and macro F1
/// means and SDs over repeated runs, mean best epochs.
inline std::vector<metrics::BenchmarkRow> summarize_logs(const std::vector<LabeledLog>& logs) {
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<const ExperimentLog*>> groups;
  for (const auto& l : logs) {
    auto key = std::make_pair(l.model, l.dataset);
    if (!groups.contains(key)) order.push_back(key);
    groups[key].push_back(&l.log);
  }
  std::vector<metrics::BenchmarkRow> rows;
  for (const auto& key : order) {
    std::vector<double> acc[2], f1[2], epoch[2];
    for (const auto* log : groups[key]) {
      for (int p = 0; p < 2; ++p) {
        const auto* ph = log->find(p == 0 ? metrics::Phase::tl : metrics::Phase::ft);
        if (!ph) continue;
        acc[p].push_back(ph->test.accuracy);
        f1[p].push_back(ph->test.macro_f1);
        epoch[p].push_back(ph->best_epoch);
      }
    }
    metrics::BenchmarkRow r;
    r.model = key.first;
    r.dataset = key.second;
    const auto a0 = detail::stats(acc[0]), f0 = detail::stats(f1[0]);
    const auto a1 = detail::stats(acc[1]), f1s = detail::stats(f1[1]);
    r.acc = a0.mean;
    r.acc_sd = a0.sd;
    r.f1 = f0.mean;
    r.f1_sd = f0.sd;
    r.acc_ft = a1.mean;
    r.acc_sd_ft = a1.sd;
    r.f1_ft = f1s.mean;
    r.f1_sd_ft = f1s.sd;
    r.best_epoch = detail::stats(epoch[0]).mean;
    r.best_epoch_ft = detail::stats(epoch[1]).mean;
    rows.push_back(r);
  }
  return rows;
}

/// RunRecords (test-split report per phase) for the JSON Lines output.
inline std::vector<metrics::RunRecord> run_records(const std::vector<LabeledLog>& logs) {
  std::vector<metrics::RunRecord> out;
  for (const auto& l : logs) {
    for (const auto& ph : l.log.phases) out.push_back({l.model, l.dataset, ph.phase, ph.test, double(ph.best_epoch)});
  }
  return out;
}

inline void emit_results(const std::vector<LabeledLog>& logs, const std::filesystem::path& csv_path,
                         const std::optional<std::filesystem::path>& jsonl_path = std::nullopt) {
  auto open = [](const std::filesystem::path& p) {
    if (p.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    return out;
  };
  {
    auto out = open(csv_path);
    metrics::write_benchmark_csv(out, summarize_logs(logs));
    if (!out) throw IoError("write failed: " + csv_path.string());
  }
  if (jsonl_path) {
    auto out = open(*jsonl_path);
    for (const auto& r : run_records(logs)) out << metrics::to_json(r).dump() << '\n';
    if (!out) throw IoError("write failed: " + jsonl_path->string());
  }
}

}  // namespace pldc::harness
