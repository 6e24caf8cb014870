// pldc: dataset, augmentation, few-shot and benchmark tooling.

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pldc/augment.hpp"
#include "pldc/dataset.hpp"
#include "pldc/harness.hpp"
#include "pldc/image.hpp"
#include "pldc/manifest.hpp"
#include "pldc/metrics.hpp"
#include "pldc/protoclass.hpp"
#include "pldc/tensorkit.hpp"
#include "pldc/text.hpp"

namespace fs = std::filesystem;
using namespace pldc;

namespace {

// JSON config file for CLI11. Nested objects address subcommands:
// {"seed": 7, "augment": {"mode": "color"}}.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}\n"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(input);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config file: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file: expected a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void collect(const nlohmann::json& obj, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, v] : obj.items()) {
      if (v.is_object()) {
        auto p = parents;
        p.push_back(key);
        collect(v, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (v.is_array()) {
        for (const auto& e : v) item.inputs.push_back(scalar(e));
      } else {
        item.inputs.push_back(scalar(v));
      }
      out.push_back(std::move(item));
    }
  }
};

template <class F>
void parallel_for(std::size_t n, unsigned jobs, F&& body) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned t = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (t == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < t; ++i) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string thousands(std::uint64_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

fs::path canonical_or_absolute(const fs::path& p) {
  std::error_code ec;
  auto c = fs::weakly_canonical(p, ec);
  return ec ? fs::absolute(p) : c;
}

bool inside(const fs::path& child, const fs::path& parent) {
  const auto c = canonical_or_absolute(child), p = canonical_or_absolute(parent);
  auto ci = c.begin();
  for (auto pi = p.begin(); pi != p.end(); ++pi, ++ci) {
    if (pi->empty()) continue;
    if (ci == c.end() || *ci != *pi) return false;
  }
  return true;
}

void refuse_overwrite(const fs::path& out, const fs::path& in) {
  if (canonical_or_absolute(out) == canonical_or_absolute(in)) {
    throw ValidationError("output " + out.string() + " would overwrite input " + in.string());
  }
}

void refuse_inside(const fs::path& out_dir, const fs::path& in_dir) {
  if (inside(out_dir, in_dir)) {
    throw ValidationError("output directory " + out_dir.string() + " lies inside input directory " + in_dir.string());
  }
}

ImageFormat parse_format(const std::string& s) {
  if (s == "png") return ImageFormat::png;
  if (s == "ppm") return ImageFormat::ppm;
  throw InvalidArgument("unknown image format '" + s + "'");
}

void write_text_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed: " + path.string());
}

void print_report(std::ostream& os, const metrics::MetricReport& r) {
  os << "accuracy " << std::fixed << std::setprecision(4) << r.accuracy << '\n'
     << "macro_precision " << r.macro_precision << '\n'
     << "macro_recall " << r.macro_recall << '\n'
     << "macro_f1 " << r.macro_f1 << '\n'
     << "weighted_f1 " << r.weighted_f1 << '\n';
  std::size_t w = 5;
  for (const auto& c : r.per_class) w = std::max(w, c.label.size());
  os << std::left << std::setw(static_cast<int>(w) + 2) << "class" << "precision  recall  f1      support\n";
  for (const auto& c : r.per_class) {
    os << std::left << std::setw(static_cast<int>(w) + 2) << c.label << std::setw(11) << c.precision << std::setw(8)
       << c.recall << std::setw(8) << c.f1 << c.support << '\n';
  }
  os << std::defaultfloat << std::right;
}

// ---------------------------------------------------------------------------
// augment

struct AugmentArgs {
  std::string mode = "combined";
  std::uint64_t seed = 0;
  std::string in, out, format = "png", manifest;
  bool byte_noise = false;
};

int run_augment(const AugmentArgs& a, unsigned jobs) {
  const auto mode = augment::parse_mode(a.mode);
  const fs::path out_dir = a.out;
  refuse_inside(out_dir, a.in);
  refuse_inside(a.in, out_dir);
  augment::DirectorySource source(a.in);
  const auto ids = source.list_ids();
  if (ids.empty()) throw ValidationError("no images found under " + a.in);
  const auto plan = augment::build_plan(mode, ids, a.seed);
  augment::DirectorySink sink(out_dir, parse_format(a.format));
  augment::ExecOptions opts;
  opts.jobs = jobs;
  opts.aug.noise_in_unit_space = !a.byte_noise;
  Manifest m;
  m.records = augment::execute_plan(plan, source, sink, opts);
  for (auto& r : m.records) r.path = fs::path(r.path).lexically_relative(out_dir).generic_string();
  m.global_seed = a.seed;
  m.parameters = {{"command", "augment"}, {"mode", a.mode}, {"format", a.format}, {"byte_noise", a.byte_noise}};
  const fs::path manifest = a.manifest.empty() ? out_dir / "manifest.jsonl" : fs::path(a.manifest);
  save_manifest(manifest, m);
  std::cout << ids.size() << " inputs -> " << m.records.size() << " outputs (x" << augment::multiplier(mode) << ", "
            << a.mode << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// build-dataset

struct BuildArgs {
  std::string sources;
  std::vector<std::string> rules;
  std::size_t min_class_size = 200;
  std::int64_t target = 3500;
  std::uint64_t seed = 0;
  double test_fraction = 0.2, val_fraction = 0.2;
  std::string mode = "combined";
  std::string out = "pldc_manifest.jsonl", summary, images, format = "png";
};

std::vector<std::pair<std::string, fs::path>> read_sources(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  const auto base = file.parent_path();
  auto resolve = [&](const std::string& d) { return fs::path(d).is_absolute() ? fs::path(d) : base / d; };
  std::vector<std::pair<std::string, fs::path>> out;
  if (j.is_object() && j.contains("sources")) j = j["sources"];
  if (j.is_array()) {
    for (const auto& s : j) out.emplace_back(s.at("name").get<std::string>(), resolve(s.at("dir").get<std::string>()));
  } else if (j.is_object()) {
    for (const auto& [name, dir] : j.items()) out.emplace_back(name, resolve(dir.get<std::string>()));
  } else {
    throw ParseError(file.string() + ": expected a list of {name, dir} or a name -> dir object");
  }
  if (out.empty()) throw ValidationError(file.string() + ": no sources listed");
  return out;
}

// Writes every record's image below `root` and points the record at it.
void materialize(Manifest& m, const std::map<std::string, std::string>& source_paths, const fs::path& root,
                 ImageFormat fmt, unsigned jobs) {
  fs::create_directories(root);
  parallel_for(m.records.size(), jobs, [&](std::size_t i) {
    auto& r = m.records[i];
    const std::string& parent = r.lineage ? r.lineage->parent : r.id;
    const auto it = source_paths.find(parent);
    if (it == source_paths.end()) throw ValidationError("no source image for '" + parent + "'");
    Image img = load_image(it->second);
    if (r.lineage) img = augment::apply_aug_op(img, augment::parse_aug_op(r.lineage->op), r.lineage->seed);
    const std::string rel = augment::sanitize_id(r.id) + extension(fmt);
    save_image(root / rel, img, fmt);
    r.path = rel;
    r.width = static_cast<std::int64_t>(img.width());
    r.height = static_cast<std::int64_t>(img.height());
  });
}

int run_build(const BuildArgs& a, unsigned jobs) {
  const auto mode = augment::parse_mode(a.mode);
  const auto listed = read_sources(a.sources);
  std::vector<dataset::SourceSpec> specs;
  for (const auto& [name, dir] : listed) {
    if (!a.images.empty()) refuse_inside(a.images, dir);
    refuse_overwrite(a.out, dir);
    specs.push_back(dataset::scan_source_dir(name, dir));
  }
  std::vector<dataset::ClassRule> rules;
  for (const auto& f : a.rules) {
    refuse_overwrite(a.out, f);
    const auto more = dataset::load_class_rules(f);
    rules.insert(rules.end(), more.begin(), more.end());
  }

  Manifest m = dataset::merge_sources(specs);
  for (auto& r : m.records) {
    // dimensions are read lazily only when images are materialized
    r.width = r.height = 0;
  }
  dataset::CleanupLog cleanup;
  m = dataset::apply_class_rules(m, rules, a.min_class_size, &cleanup);
  if (m.empty()) throw ValidationError("no classes left after cleanup");
  std::map<std::string, std::string> source_paths;
  for (const auto& r : m.records) source_paths[r.id] = r.path;

  dataset::SplitLog split_log;
  m = dataset::stratified_split(m, dataset::SplitSpec::holdout(a.test_fraction, a.seed), &split_log);
  dataset::BalanceLog balance_log;
  m = dataset::balance_to_target(m, a.target, mode, a.seed, &balance_log);
  m = dataset::stratified_split(m, dataset::SplitSpec::train_val(a.val_fraction, a.seed), &split_log);
  check_invariants(m);

  if (!a.images.empty()) materialize(m, source_paths, a.images, parse_format(a.format), jobs);

  m.global_seed = a.seed;
  m.parameters = {{"command", "build-dataset"},      {"min_class_size", a.min_class_size},
                  {"target", a.target},               {"mode", a.mode},
                  {"test_fraction", a.test_fraction}, {"val_fraction", a.val_fraction}};
  save_manifest(a.out, m);

  const auto summary = dataset::summarize(m);
  nlohmann::ordered_json sj = dataset::to_json(summary);
  sj["cleanup"] = {{"deleted_by_size", cleanup.deleted_by_size},
                   {"deleted_by_rule", cleanup.deleted_by_rule},
                   {"merged", cleanup.merged}};
  std::vector<std::string> warnings = cleanup.warnings;
  warnings.insert(warnings.end(), split_log.warnings.begin(), split_log.warnings.end());
  warnings.insert(warnings.end(), balance_log.warnings.begin(), balance_log.warnings.end());
  sj["warnings"] = warnings;
  const fs::path summary_path = a.summary.empty() ? fs::path(a.out + ".summary.json") : fs::path(a.summary);
  write_text_file(summary_path, sj.dump(2) + "\n");

  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  std::cout << summary.plants << " plants, " << summary.classes << " classes, " << summary.total << " images (train "
            << summary.train << ", val " << summary.val << ", test " << summary.test << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// split

struct SplitArgs {
  double ratio = 0.8;
  std::uint64_t seed = 0;
  std::string kind = "ratio";
  std::string manifest, in, out;
};

Manifest manifest_from_dir(const fs::path& dir) {
  augment::DirectorySource source(dir);
  Manifest m;
  for (const auto& id : source.list_ids()) {
    auto r = source.describe(id);
    r.path = id;
    if (r.final_class.empty()) throw ValidationError("image '" + id + "' is not inside a class directory");
    m.records.push_back(std::move(r));
  }
  if (m.empty()) throw ValidationError("no images found under " + dir.string());
  return m;
}

int run_split(const SplitArgs& a) {
  if (a.manifest.empty() == a.in.empty()) throw ValidationError("split: give exactly one of --manifest or --in");
  Manifest m;
  if (!a.manifest.empty()) {
    refuse_overwrite(a.out, a.manifest);
    m = load_manifest(a.manifest);
  } else {
    refuse_inside(a.out, a.in);
    m = manifest_from_dir(a.in);
  }
  dataset::SplitSpec spec;
  if (a.kind == "ratio") {
    spec = dataset::SplitSpec::ratio(a.ratio, a.seed);
  } else if (a.kind == "holdout") {
    spec = dataset::SplitSpec::holdout(1.0 - a.ratio, a.seed);
  } else if (a.kind == "train-val") {
    spec = dataset::SplitSpec::train_val(1.0 - a.ratio, a.seed);
  } else {
    throw InvalidArgument("unknown split kind '" + a.kind + "'");
  }
  dataset::SplitLog log;
  m = dataset::stratified_split(m, spec, &log);
  m.global_seed = a.seed;
  m.parameters["split"] = {{"kind", a.kind}, {"ratio", a.ratio}};
  save_manifest(a.out, m);
  for (const auto& w : log.warnings) std::cerr << "warning: " << w << '\n';
  const auto s = dataset::summarize(m);
  const bool tv = a.kind == "train-val";
  std::cout << "class,train," << (tv ? "val" : "test") << '\n';
  for (const auto& [cls, c] : s.per_class) std::cout << cls << ',' << c.train << ',' << (tv ? c.val : c.test) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// protoclass

struct ProtoArgs {
  std::string supports, prototypes, queries, out, json;
  std::size_t shots = 1;
  std::uint64_t seed = 0;
};

void save_text(const std::string& path, const std::function<void(std::ostream&)>& body) {
  if (path.empty()) {
    body(std::cout);
    return;
  }
  std::ostringstream ss;
  body(ss);
  write_text_file(path, ss.str());
}

int run_proto_build(const ProtoArgs& a) {
  refuse_overwrite(a.out, a.supports);
  const auto set = protoclass::build_prototypes(protoclass::load_embeddings(a.supports), {a.shots, a.seed});
  save_text(a.out, [&](std::ostream& os) { protoclass::write_embeddings(os, protoclass::to_embeddings(set)); });
  std::cerr << set.prototypes.size() << " prototypes, dimension " << set.dimension << ", " << set.shots << "-shot\n";
  return 0;
}

protoclass::PrototypeSet prototypes_for(const ProtoArgs& a) {
  if (!a.prototypes.empty()) return protoclass::from_embeddings(protoclass::load_embeddings(a.prototypes), a.shots);
  return protoclass::build_prototypes(protoclass::load_embeddings(a.supports), {a.shots, a.seed});
}

int run_proto_predict(const ProtoArgs& a) {
  if (!a.out.empty()) refuse_overwrite(a.out, a.queries);
  const auto set = prototypes_for(a);
  const auto queries = protoclass::load_embeddings(a.queries);
  save_text(a.out, [&](std::ostream& os) {
    os << "id,predicted,distance\n";
    for (const auto& q : queries) {
      const auto p = protoclass::predict(q, set);
      os << q.id << ',' << p.label << ',' << text::fmt_real(p.distances.at(p.label)) << '\n';
    }
  });
  return 0;
}

int run_proto_eval(const ProtoArgs& a) {
  const auto set = prototypes_for(a);
  const auto report = protoclass::evaluate(protoclass::load_embeddings(a.queries), set);
  print_report(std::cout, report);
  if (!a.json.empty()) write_text_file(a.json, metrics::to_json(report).dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// metrics / rank

struct MetricsArgs {
  std::string pairs, json;
  std::vector<std::string> labels;
};

int run_metrics(const MetricsArgs& a) {
  std::ifstream in(a.pairs);
  if (!in) throw IoError("cannot open " + a.pairs);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::blank(line)) continue;
    const auto cells = text::split_csv(line);
    if (header) {
      header = false;
      if (cells.size() != 2) throw ParseError("pairs file header must have two columns (truth,predicted)", lineno);
      continue;
    }
    if (cells.size() != 2) throw ParseError("expected 2 cells, found " + std::to_string(cells.size()), lineno);
    pairs.emplace_back(cells[0], cells[1]);
    seen.insert(cells[0]);
    seen.insert(cells[1]);
  }
  const std::vector<std::string> labels = a.labels.empty() ? std::vector<std::string>(seen.begin(), seen.end()) : a.labels;
  const auto report = metrics::compute_report(metrics::confusion_from_pairs(pairs, labels));
  print_report(std::cout, report);
  if (!a.json.empty()) write_text_file(a.json, metrics::to_json(report).dump(2) + "\n");
  return 0;
}

struct RankArgs {
  std::string by = "avg-metric", results, ranks, phase = "ft", metric = "accuracy", out, title;
};

int run_rank(const RankArgs& a) {
  metrics::RankingTable table;
  const bool by_rank = a.by == "avg-rank";
  if (!by_rank && a.by != "avg-metric") throw InvalidArgument("unknown ranking '" + a.by + "'");
  if (a.metric != "accuracy" && a.metric != "f1") throw InvalidArgument("unknown metric '" + a.metric + "'");
  if (!a.ranks.empty()) {
    if (!by_rank) throw ValidationError("--ranks requires --by avg-rank");
    std::ifstream in(a.ranks);
    if (!in) throw IoError("cannot open " + a.ranks);
    std::vector<std::pair<std::string, std::vector<double>>> per;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      if (++lineno == 1 || text::blank(line)) continue;
      const auto cells = text::split_csv(line);
      std::vector<double> r;
      try {
        for (std::size_t i = 1; i < cells.size(); ++i) r.push_back(text::parse_real(cells[i]));
      } catch (const std::exception& e) {
        throw ParseError(e.what(), lineno);
      }
      per.emplace_back(cells.at(0), r);
    }
    table = metrics::average_rank(per);
  } else {
    if (a.results.empty()) throw ValidationError("rank: give --results (or --ranks with --by avg-rank)");
    auto runs = metrics::select_phase(metrics::to_run_records(metrics::load_benchmark_csv(a.results)),
                                      metrics::parse_phase(a.phase));
    if (a.metric == "f1") {
      for (auto& r : runs) r.report.accuracy = r.report.macro_f1;
    }
    if (by_rank) {
      table = metrics::average_rank(metrics::ranks_per_dataset(runs));
    } else {
      std::vector<std::pair<std::string, double>> entries;
      std::vector<std::string> order;
      for (const auto& r : runs) {
        if (std::find(order.begin(), order.end(), r.model) == order.end()) order.push_back(r.model);
      }
      std::map<std::string, double> mean;
      for (const auto& g : metrics::aggregate_mean(runs, metrics::GroupBy::model)) mean[g.key] = g.accuracy;
      for (const auto& m : order) entries.emplace_back(m, mean.at(m));
      table = metrics::rank_by_value(entries, true);
    }
  }
  const std::string title =
      !a.title.empty() ? a.title : by_rank ? "Ranking by average rank" : "Ranking by average " + a.metric;
  metrics::write_leaderboard(std::cout, table, title);
  if (!a.out.empty()) {
    std::ostringstream ss;
    metrics::write_ranking_csv(ss, table);
    write_text_file(a.out, ss.str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// harness

struct HarnessArgs {
  std::string config, mock, model = "mock", dataset = "scripted", out, jsonl, log;
  std::optional<int> patience, tl_epochs, ft_epochs;
  bool no_patience = false;
  std::string monitor;
  int runs = 1;
};

int run_harness(const HarnessArgs& a) {
  auto cfg = a.config.empty() ? harness::ExperimentConfig{} : harness::load_config(a.config);
  if (a.patience) cfg.patience = *a.patience;
  if (a.no_patience) cfg.patience.reset();
  if (a.tl_epochs) cfg.tl_epochs = *a.tl_epochs;
  if (a.ft_epochs) cfg.ft_epochs = *a.ft_epochs;
  if (!a.monitor.empty()) cfg.monitor = harness::parse_monitor(a.monitor);
  harness::validate(cfg);
  if (a.runs < 1) throw ValidationError("--runs must be >= 1");

  std::vector<harness::LabeledLog> logs;
  for (int i = 0; i < a.runs; ++i) {
    auto trainer = harness::ScriptedTrainer::load(a.mock);
    try {
      logs.push_back({a.model, a.dataset, harness::run_experiment(trainer, cfg)});
    } catch (const harness::ExperimentAborted& e) {
      if (!a.log.empty()) write_text_file(a.log, harness::to_json(e.log).dump(2) + "\n");
      throw;
    }
  }
  for (const auto& ph : logs.front().log.phases) {
    std::cout << metrics::to_string(ph.phase) << ": " << ph.epochs.size() << " epochs, best " << ph.best_epoch
              << (ph.early_stopped ? " (early stop)" : "") << ", restored " << ph.restored << ", test accuracy "
              << text::fmt_real(ph.test.accuracy) << '\n';
  }
  if (!a.log.empty()) write_text_file(a.log, harness::to_json(logs.front().log).dump(2) + "\n");
  if (!a.out.empty()) {
    harness::emit_results(logs, a.out, a.jsonl.empty() ? std::nullopt : std::optional<fs::path>(a.jsonl));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// params

struct ParamsArgs {
  std::uint64_t head_classes = 6, features = 1920, ca_channels = 1920, ca_ratio = 8;
  bool unshared = false, ca_bias = false;
};

int run_params(const ParamsArgs& a) {
  const auto head = tensorkit::dense_param_count(a.features, a.head_classes, true);
  const auto ca = tensorkit::ca_param_count(a.ca_channels, a.ca_ratio, !a.unshared, a.ca_bias);
  std::cout << "Trainable head params (" << a.features << " -> " << a.head_classes << "): " << thousands(head) << '\n'
            << "Channel attention params (C=" << a.ca_channels << ", r=" << a.ca_ratio << ", "
            << (a.unshared ? "unshared" : "shared") << (a.ca_bias ? ", bias" : "") << "): " << thousands(ca) << '\n'
            << "Head + attention: " << thousands(head + ca) << '\n';
  return 0;
}

const CLI::App* deepest(const CLI::App* app) {
  const auto subs = app->get_subcommands();
  return subs.empty() ? app : deepest(subs.front());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pldc: plant leaf disease dataset and benchmark tools", "pldc"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file; flags given on the command line win");
  app.require_subcommand(1);
  app.fallthrough();
  unsigned jobs = 1;
  app.add_option("--jobs,-j", jobs, "Worker threads for image work")->check(CLI::Range(1u, 256u))->capture_default_str();
  const char* seed_env = "PLDC_SEED";

  AugmentArgs aug;
  auto* c_aug = app.add_subcommand("augment", "Write augmented copies of every image below a directory");
  c_aug->add_option("--mode", aug.mode, "none|color|noise|transform|combined")
      ->check(CLI::IsMember({"none", "color", "noise", "transform", "combined"}))
      ->capture_default_str();
  c_aug->add_option("--seed", aug.seed, "Global seed")->required()->envname(seed_env);
  c_aug->add_option("--in", aug.in, "Input directory (class subdirectories)")->required()->check(CLI::ExistingDirectory);
  c_aug->add_option("--out", aug.out, "Output directory")->required();
  c_aug->add_option("--format", aug.format, "png|ppm")->check(CLI::IsMember({"png", "ppm"}))->capture_default_str();
  c_aug->add_option("--manifest", aug.manifest, "Manifest path (default OUT/manifest.jsonl)");
  c_aug->add_flag("--byte-noise", aug.byte_noise, "Draw noise on the 0-255 scale instead of [0,1]");

  BuildArgs build;
  auto* c_build = app.add_subcommand("build-dataset", "Merge sources, clean classes, split, balance and summarize");
  c_build->add_option("--sources", build.sources, "JSON list of {name, dir}")->required()->check(CLI::ExistingFile);
  c_build->add_option("--rules", build.rules, "Class rule file (repeatable)")->check(CLI::ExistingFile);
  c_build->add_option("--min-class-size", build.min_class_size, "Classes at or below this size are deleted")
      ->capture_default_str();
  c_build->add_option("--target", build.target, "Train images per class after balancing")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_build->add_option("--seed", build.seed, "Global seed")->required()->envname(seed_env);
  c_build->add_option("--test-fraction", build.test_fraction, "Hold-out share per class")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  c_build->add_option("--val-fraction", build.val_fraction, "Validation share of the balanced train side")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  c_build->add_option("--mode", build.mode, "Augmentation mode used for balancing")
      ->check(CLI::IsMember({"none", "color", "noise", "transform", "combined"}))
      ->capture_default_str();
  c_build->add_option("--out", build.out, "Manifest path")->capture_default_str();
  c_build->add_option("--summary", build.summary, "Summary JSON path (default OUT.summary.json)");
  c_build->add_option("--images", build.images, "Write every image of the dataset below this directory");
  c_build->add_option("--format", build.format, "png|ppm for --images")
      ->check(CLI::IsMember({"png", "ppm"}))
      ->capture_default_str();

  SplitArgs split;
  auto* c_split = app.add_subcommand("split", "Stratified per-class split of a manifest or image directory");
  c_split->add_option("--ratio", split.ratio, "Train share per class")->required()->check(CLI::Range(0.0, 1.0));
  c_split->add_option("--seed", split.seed, "Global seed")->required()->envname(seed_env);
  c_split->add_option("--kind", split.kind, "ratio (train/test), holdout (train/test) or train-val")
      ->check(CLI::IsMember({"ratio", "holdout", "train-val"}))
      ->capture_default_str();
  c_split->add_option("--manifest", split.manifest, "Input manifest")->check(CLI::ExistingFile);
  c_split->add_option("--in", split.in, "Input directory (class subdirectories)")->check(CLI::ExistingDirectory);
  c_split->add_option("--out", split.out, "Output manifest")->required();

  ProtoArgs proto;
  auto* c_proto = app.add_subcommand("protoclass", "Nearest-prototype few-shot classification over embeddings");
  c_proto->require_subcommand(1);
  auto* p_build = c_proto->add_subcommand("build", "Average K support embeddings per class");
  p_build->add_option("--supports", proto.supports, "Support embeddings CSV")->required()->check(CLI::ExistingFile);
  p_build->add_option("--shots", proto.shots, "Supports per class (K)")->check(CLI::PositiveNumber)->capture_default_str();
  p_build->add_option("--seed", proto.seed, "Seed for choosing supports")->required()->envname(seed_env);
  p_build->add_option("--out", proto.out, "Prototype CSV (default stdout)");
  for (auto* sub : {c_proto->add_subcommand("predict", "Label queries by the nearest prototype"),
                    c_proto->add_subcommand("eval", "Score queries against their labels")}) {
    auto* src = sub->add_option_group("prototypes");
    src->add_option("--prototypes", proto.prototypes, "Prototype CSV")->check(CLI::ExistingFile);
    src->add_option("--supports", proto.supports, "Support embeddings CSV (prototypes built on the fly)")
        ->check(CLI::ExistingFile);
    src->require_option(1);
    sub->add_option("--queries", proto.queries, "Query embeddings CSV")->required()->check(CLI::ExistingFile);
    sub->add_option("--shots", proto.shots, "Supports per class with --supports")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--seed", proto.seed, "Seed for choosing supports")->envname(seed_env)->capture_default_str();
    if (sub->get_name() == "predict") {
      sub->add_option("--out", proto.out, "Predictions CSV (default stdout)");
    } else {
      sub->add_option("--json", proto.json, "Also write the report as JSON");
    }
  }

  MetricsArgs met;
  auto* c_met = app.add_subcommand("metrics", "Accuracy, precision, recall and F1 from (truth, predicted) pairs");
  c_met->add_option("--pairs", met.pairs, "CSV with header truth,predicted")->required()->check(CLI::ExistingFile);
  c_met->add_option("--labels", met.labels, "Label order (default: sorted labels seen)")->delimiter(',');
  c_met->add_option("--json", met.json, "Also write the report as JSON");

  RankArgs rank;
  auto* c_rank = app.add_subcommand("rank", "Leaderboards from benchmark results");
  c_rank->add_option("--by", rank.by, "avg-metric|avg-rank")
      ->check(CLI::IsMember({"avg-metric", "avg-rank"}))
      ->required();
  c_rank->add_option("--results", rank.results, "Benchmark results CSV")->check(CLI::ExistingFile);
  c_rank->add_option("--ranks", rank.ranks, "Per-dataset rank CSV (model, rank...) for avg-rank")
      ->check(CLI::ExistingFile);
  c_rank->add_option("--phase", rank.phase, "tl|ft")->check(CLI::IsMember({"tl", "ft"}))->capture_default_str();
  c_rank->add_option("--metric", rank.metric, "accuracy|f1")
      ->check(CLI::IsMember({"accuracy", "f1"}))
      ->capture_default_str();
  c_rank->add_option("--out", rank.out, "Ranking CSV");
  c_rank->add_option("--title", rank.title, "Leaderboard title");

  HarnessArgs har;
  auto* c_har = app.add_subcommand("harness", "Two-phase training control loop");
  c_har->require_subcommand(1);
  auto* h_run = c_har->add_subcommand("run", "Run an experiment against a scripted trainer");
  h_run->add_option("--config", har.config, "Experiment config JSON")->check(CLI::ExistingFile);
  h_run->add_option("--mock-trainer", har.mock, "Scripted trainer JSON")->required()->check(CLI::ExistingFile);
  h_run->add_option("--patience", har.patience, "Early-stopping patience (default 50)")->check(CLI::NonNegativeNumber);
  h_run->add_flag("--no-early-stop", har.no_patience, "Disable early stopping");
  h_run->add_option("--tl-epochs", har.tl_epochs, "Frozen-phase epoch budget (default 200)")->check(CLI::PositiveNumber);
  h_run->add_option("--ft-epochs", har.ft_epochs, "Fine-tuning epoch budget (default 200)")->check(CLI::PositiveNumber);
  h_run->add_option("--monitor", har.monitor, "val_loss|val_accuracy");
  h_run->add_option("--runs", har.runs, "Repeated runs")->capture_default_str();
  h_run->add_option("--model", har.model, "Model label")->capture_default_str();
  h_run->add_option("--dataset", har.dataset, "Dataset label")->capture_default_str();
  h_run->add_option("--out", har.out, "Results CSV");
  h_run->add_option("--jsonl", har.jsonl, "Per-run JSON Lines (with --out)");
  h_run->add_option("--log", har.log, "Experiment log JSON");

  ParamsArgs par;
  auto* c_par = app.add_subcommand("params", "Parameter counts for the classifier head and channel attention");
  c_par->add_option("--head-classes", par.head_classes, "Output classes of the head")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_par->add_option("--features", par.features, "Pooled feature width feeding the head")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_par->add_option("--ca-channels", par.ca_channels, "Channels entering channel attention")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_par->add_option("--ca-ratio", par.ca_ratio, "Reduction ratio")->check(CLI::PositiveNumber)->capture_default_str();
  c_par->add_flag("--unshared", par.unshared, "Separate MLPs for the average and max branches");
  c_par->add_flag("--ca-bias", par.ca_bias, "Count MLP biases");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const bool unknown = dynamic_cast<const CLI::ExtrasError*>(&e) != nullptr ||
                         std::string(e.what()).find("subcommand") != std::string::npos;
    if (unknown) {
      std::cerr << "pldc: " << e.what() << "\n\n" << deepest(&app)->help();
      return 2;
    }
    std::cerr << "pldc: " << e.what() << '\n';
    return 1;
  }

  try {
    if (c_aug->parsed()) return run_augment(aug, jobs);
    if (c_build->parsed()) return run_build(build, jobs);
    if (c_split->parsed()) return run_split(split);
    if (p_build->parsed()) return run_proto_build(proto);
    if (c_proto->get_subcommand("predict")->parsed()) return run_proto_predict(proto);
    if (c_proto->get_subcommand("eval")->parsed()) return run_proto_eval(proto);
    if (c_met->parsed()) return run_metrics(met);
    if (c_rank->parsed()) return run_rank(rank);
    if (h_run->parsed()) return run_harness(har);
    if (c_par->parsed()) return run_params(par);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    std::cerr << "pldc: " << msg << '\n';
    return 1;
  }
  std::cerr << app.help();
  return 2;
}
