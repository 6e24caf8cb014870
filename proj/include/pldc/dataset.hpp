#pragma once

// Multi-source dataset construction: merge, class cleanup, stratified splits,
// balancing through augmentation, and summaries.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "pldc/augment.hpp"
#include "pldc/errors.hpp"
#include "pldc/image.hpp"
#include "pldc/manifest.hpp"
#include "pldc/random.hpp"

namespace pldc::dataset {

/// Separator between source name and source class in initial class labels.
inline constexpr std::string_view kClassSep = "::";

// ---------------------------------------------------------------------------
// Merge

struct SourceSpec {
  std::string name;
  std::map<std::string, std::vector<std::string>> classes;  // class -> files
};

/// Scans `dir`: every immediate subdirectory is a class, image files below it are members.
inline SourceSpec scan_source_dir(const std::string& name, const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("source '" + name + "': not a directory: " + dir.string());
  SourceSpec spec{name, {}};
  for (const auto& cls : std::filesystem::directory_iterator(dir)) {
    if (!cls.is_directory()) continue;
    auto& files = spec.classes[cls.path().filename().string()];
    for (const auto& f : std::filesystem::recursive_directory_iterator(cls.path())) {
      if (f.is_regular_file() && has_image_extension(f.path())) files.push_back(f.path().generic_string());
    }
    std::sort(files.begin(), files.end());
  }
  return spec;
}

/// One unassigned record per file; final_class = "<source>::<class>".
inline Manifest merge_sources(const std::vector<SourceSpec>& sources) {
  std::set<std::string> names;
  for (const auto& s : sources) {
    if (!names.insert(s.name).second) throw InvalidArgument("merge_sources: duplicate source name '" + s.name + "'");
    for (const auto& [cls, files] : s.classes) {
      if (files.empty()) throw InvalidArgument("merge_sources: empty file list for " + s.name + "/" + cls);
    }
  }
  Manifest m;
  std::set<std::string> ids;
  for (const auto& s : sources) {
    for (const auto& [cls, files] : s.classes) {
      for (const auto& file : files) {
        ImageRecord r;
        r.id = s.name + "/" + cls + "/" + std::filesystem::path(file).filename().string();
        if (!ids.insert(r.id).second) throw ValidationError("merge_sources: duplicate record id '" + r.id + "'");
        r.source_dataset = s.name;
        r.original_class = cls;
        r.final_class = s.name + std::string(kClassSep) + cls;
        r.path = file;
        m.records.push_back(std::move(r));
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Class rules

enum class DeleteReason { too_small, complex, multi_disease, other };

inline DeleteReason parse_reason(std::string_view s) {
  if (s == "too_small" || s == "too small") return DeleteReason::too_small;
  if (s == "complex") return DeleteReason::complex;
  if (s == "multi_disease" || s == "multi disease") return DeleteReason::multi_disease;
  if (s == "other") return DeleteReason::other;
  throw ParseError("unknown delete reason '" + std::string(s) + "'");
}

struct ClassRule {
  enum class Kind { remove, merge } kind = Kind::remove;
  std::string cls;  // remove
  DeleteReason reason = DeleteReason::other;
  std::string class_a, class_b, into;  // merge

  static ClassRule remove(std::string cls, DeleteReason reason) {
    ClassRule r;
    r.cls = std::move(cls);
    r.reason = reason;
    return r;
  }
  static ClassRule merge(std::string a, std::string b, std::string into) {
    ClassRule r;
    r.kind = Kind::merge;
    r.class_a = std::move(a);
    r.class_b = std::move(b);
    r.into = std::move(into);
    return r;
  }
};

/// Rule file: JSON list of {"kind": "delete", "args": {"class", "reason"}} or
/// {"kind": "merge", "args": {"class_a", "class_b", "into"}}.
inline std::vector<ClassRule> parse_class_rules(const nlohmann::json& j) {
  if (!j.is_array()) throw ParseError("class rules: expected a JSON list");
  std::vector<ClassRule> rules;
  for (const auto& item : j) {
    const std::string kind = item.at("kind");
    const auto& args = item.at("args");
    if (kind == "delete") {
      rules.push_back(ClassRule::remove(args.at("class"), parse_reason(args.value("reason", "other"))));
    } else if (kind == "merge") {
      rules.push_back(ClassRule::merge(args.at("class_a"), args.at("class_b"), args.at("into")));
    } else {
      throw ParseError("class rules: unknown kind '" + kind + "'");
    }
  }
  return rules;
}

inline std::vector<ClassRule> load_class_rules(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return parse_class_rules(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Lower-case, alphanumerics only; the "<source>::" prefix is dropped.
inline std::string normalize_class_key(std::string_view label) {
  const auto sep = label.rfind(kClassSep);
  if (sep != std::string_view::npos) label = label.substr(sep + kClassSep.size());
  std::string out;
  for (char ch : label) {
    if (std::isalnum(static_cast<unsigned char>(ch))) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

struct CleanupLog {
  std::vector<std::string> deleted_by_size;
  std::vector<std::string> deleted_by_rule;
  std::vector<std::string> merged;  // "a + b -> into"
  std::vector<std::string> warnings;
};

/// Removes classes with count <= min_size and classes named by delete rules,
/// then relabels merge pairs. Rules must name classes present in `m`.
inline Manifest apply_class_rules(const Manifest& m, const std::vector<ClassRule>& rules, std::size_t min_size,
                                  CleanupLog* log = nullptr) {
  const auto counts = class_counts(m);
  std::vector<std::string> missing;
  auto require = [&](const std::string& c) {
    if (!counts.contains(c) && std::find(missing.begin(), missing.end(), c) == missing.end()) missing.push_back(c);
  };
  for (const auto& r : rules) {
    if (r.kind == ClassRule::Kind::remove) {
      require(r.cls);
    } else {
      require(r.class_a);
      require(r.class_b);
    }
  }
  if (!missing.empty()) {
    std::string msg = "class rules reference missing classes:";
    for (const auto& c : missing) msg += " '" + c + "'";
    throw ValidationError(msg);
  }

  CleanupLog local;
  CleanupLog& out = log ? *log : local;
  std::set<std::string> removed;
  for (const auto& [cls, n] : counts) {
    if (n <= min_size) {
      removed.insert(cls);
      out.deleted_by_size.push_back(cls);
    }
  }
  for (const auto& r : rules) {
    if (r.kind == ClassRule::Kind::remove && removed.insert(r.cls).second) out.deleted_by_rule.push_back(r.cls);
  }

  std::map<std::string, std::string> relabel;
  for (const auto& r : rules) {
    if (r.kind != ClassRule::Kind::merge) continue;
    for (const auto* c : {&r.class_a, &r.class_b}) {
      if (removed.contains(*c)) throw ValidationError("merge rule uses deleted class '" + *c + "'");
    }
    relabel[r.class_a] = r.into;
    relabel[r.class_b] = r.into;
    out.merged.push_back(r.class_a + " + " + r.class_b + " -> " + r.into);
  }

  Manifest result;
  result.global_seed = m.global_seed;
  result.parameters = m.parameters;
  for (const auto& rec : m.records) {
    if (removed.contains(rec.final_class)) continue;
    ImageRecord r = rec;
    if (auto it = relabel.find(r.final_class); it != relabel.end()) r.final_class = it->second;
    result.records.push_back(std::move(r));
  }

  std::map<std::string, std::string> keys;
  for (const auto& [cls, n] : class_counts(result)) {
    const auto key = normalize_class_key(cls);
    if (auto [it, fresh] = keys.emplace(key, cls); !fresh) {
      out.warnings.push_back("classes '" + it->second + "' and '" + cls + "' share the key '" + key + "'");
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  enum class Kind { holdout, ratio, train_val } kind = Kind::ratio;
  double fraction = 0.5;  // holdout: test share; ratio: train share; train_val: val share
  std::uint64_t seed = 0;

  static SplitSpec holdout(double test_fraction, std::uint64_t seed) { return {Kind::holdout, test_fraction, seed}; }
  static SplitSpec ratio(double train_fraction, std::uint64_t seed) { return {Kind::ratio, train_fraction, seed}; }
  static SplitSpec train_val(double val_fraction, std::uint64_t seed) { return {Kind::train_val, val_fraction, seed}; }
};

/// floor(x + 0.5), tolerant of representation error just below a half.
inline std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9)); }

/// Records kept on the first side (train) for a class of size n.
inline std::size_t first_side_count(std::size_t n, double first_fraction) {
  return std::min(n, round_half_up(first_fraction * static_cast<double>(n)));
}

struct SplitLog {
  std::vector<std::string> warnings;
};

/// Per-class seeded shuffle, then the first round-half-up(r·n) records go to
/// the train side. train_val only reassigns records currently in train.
inline Manifest stratified_split(const Manifest& m, const SplitSpec& spec, SplitLog* log = nullptr) {
  if (!(spec.fraction > 0.0 && spec.fraction < 1.0)) {
    throw InvalidArgument("stratified_split: fraction must lie strictly in (0, 1)");
  }
  const bool tv = spec.kind == SplitSpec::Kind::train_val;
  const double first = spec.kind == SplitSpec::Kind::ratio ? spec.fraction : 1.0 - spec.fraction;
  const Split second = tv ? Split::val : Split::test;

  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    if (r.final_class.empty()) throw ValidationError("stratified_split: record '" + r.id + "' has no class");
    if (tv) {
      if (r.split == Split::train) by_class[r.final_class].push_back(i);
    } else {
      if (r.augmented()) throw ValidationError("stratified_split: augmented record '" + r.id + "' in a holdout/ratio split");
      by_class[r.final_class].push_back(i);
    }
  }

  Manifest out = m;
  for (auto& [cls, idx] : by_class) {
    const std::size_t n = idx.size();
    std::size_t k = first_side_count(n, first);
    if (n < 2) {
      k = first >= 0.5 ? n : 0;
      if (log) log->warnings.push_back("class '" + cls + "' has " + std::to_string(n) + " record(s); not split");
    }
    Rng rng(derive_seed(spec.seed, "split/" + cls, static_cast<std::uint64_t>(spec.kind)));
    shuffle(idx, rng);
    for (std::size_t j = 0; j < n; ++j) out.records[idx[j]].split = j < k ? Split::train : second;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Balancing

struct BalanceLog {
  std::map<std::string, std::size_t> pool_sizes;
  std::map<std::string, std::size_t> duplicates;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::int64_t rotated_dim(const ImageRecord& parent, const augment::AugOp& op, bool width) {
  const bool swap = op.kind == augment::AugKind::rotate && op.quarter_turns % 2 == 1;
  return (width != swap) ? parent.width : parent.height;
}

}  // namespace detail

/// Brings every train class to exactly `target` records. The pool per class is
/// the augmentation plan of its original train records under `mode`; the
/// identity entry stands for the original itself. Pools at least `target` are
/// sampled without replacement; smaller pools are kept whole and topped up with
/// duplicates drawn with replacement (flagged in the log). Non-train records
/// pass through untouched.
inline Manifest balance_to_target(const Manifest& m, std::int64_t target, augment::AugmentationMode mode,
                                  std::uint64_t seed, BalanceLog* log = nullptr) {
  if (target <= 0) throw InvalidArgument("balance_to_target: target must be positive");
  const auto want = static_cast<std::size_t>(target);

  Manifest out;
  out.global_seed = m.global_seed;
  out.parameters = m.parameters;
  std::map<std::string, std::vector<const ImageRecord*>> originals;
  for (const auto& r : m.records) {
    if (r.split == Split::train && !r.augmented()) {
      originals[r.final_class].push_back(&r);
    } else {
      if (r.split == Split::train) throw ValidationError("balance_to_target: train side already augmented ('" + r.id + "')");
      out.records.push_back(r);
    }
  }

  for (const auto& [cls, members] : originals) {
    std::vector<std::string> ids;
    ids.reserve(members.size());
    for (const auto* r : members) ids.push_back(r->id);
    const auto plan = augment::build_plan(mode, ids, seed);
    const std::size_t per = augment::multiplier(mode);
    const std::size_t pool = plan.size();

    auto make = [&](std::size_t entry_index) {
      const auto& e = plan.entries[entry_index];
      const ImageRecord& parent = *members[entry_index / per];
      if (e.op.kind == augment::AugKind::identity) return parent;
      ImageRecord r = parent;
      r.id = e.output_id();
      r.lineage = Lineage{parent.id, augment::to_string(e.op), e.stream_seed};
      r.path = "augmented/" + augment::sanitize_id(r.id) + ".png";
      r.width = detail::rotated_dim(parent, e.op, true);
      r.height = detail::rotated_dim(parent, e.op, false);
      return r;
    };

    Rng rng(derive_seed(seed, "balance/" + cls, 0));
    if (log) log->pool_sizes[cls] = pool;
    if (pool >= want) {
      auto chosen = sample_indices(pool, want, rng);
      std::sort(chosen.begin(), chosen.end());
      for (auto i : chosen) out.records.push_back(make(i));
      continue;
    }

    for (std::size_t i = 0; i < pool; ++i) out.records.push_back(make(i));
    const std::size_t extra = want - pool;
    for (std::size_t d = 1; d <= extra; ++d) {
      const auto i = static_cast<std::size_t>(rng.below(pool));
      const auto& e = plan.entries[i];
      ImageRecord r = make(i);
      if (!r.lineage) {
        r.lineage = Lineage{r.id, augment::to_string(e.op), e.stream_seed};
        r.path = "augmented/" + augment::sanitize_id(e.output_id()) + ".png";
      }
      r.id = e.output_id() + "~dup" + std::to_string(d);
      out.records.push_back(std::move(r));
    }
    if (log) {
      log->duplicates[cls] = extra;
      log->warnings.push_back("class '" + cls + "': pool " + std::to_string(pool) + " < target " +
                              std::to_string(want) + ", " + std::to_string(extra) + " duplicates drawn");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summary

struct ClassSummary {
  std::size_t train = 0, val = 0, test = 0, unassigned = 0;
  std::size_t total() const { return train + val + test + unassigned; }
};

struct Summary {
  std::size_t plants = 0;
  std::size_t classes = 0;
  std::size_t total = 0;
  std::size_t train = 0, val = 0, test = 0, unassigned = 0;
  std::map<std::string, ClassSummary> per_class;

  double percent(std::size_t part) const { return total ? 100.0 * static_cast<double>(part) / static_cast<double>(total) : 0.0; }
};

/// Default plant key: first word of the class label (after any "<source>::"), lower-cased.
inline std::string default_plant_of(std::string_view label) {
  const auto sep = label.rfind(kClassSep);
  if (sep != std::string_view::npos) label = label.substr(sep + kClassSep.size());
  std::string out;
  for (char ch : label) {
    if (ch == ' ' || ch == '_') {
      if (!out.empty()) break;
      continue;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

inline Summary summarize(const Manifest& m, const std::function<std::string(std::string_view)>& plant_of = default_plant_of) {
  Summary s;
  for (const auto& r : m.records) {
    auto& c = s.per_class[r.final_class];
    switch (r.split) {
      case Split::train: ++c.train; ++s.train; break;
      case Split::val: ++c.val; ++s.val; break;
      case Split::test: ++c.test; ++s.test; break;
      case Split::unassigned: ++c.unassigned; ++s.unassigned; break;
    }
    ++s.total;
  }
  s.classes = s.per_class.size();
  std::set<std::string> plants;
  for (const auto& [cls, _] : s.per_class) plants.insert(plant_of(cls));
  s.plants = plants.size();
  return s;
}

inline nlohmann::ordered_json to_json(const Summary& s) {
  nlohmann::ordered_json j;
  j["plants"] = s.plants;
  j["classes"] = s.classes;
  j["total"] = s.total;
  j["train"] = s.train;
  j["val"] = s.val;
  j["test"] = s.test;
  j["unassigned"] = s.unassigned;
  j["percent"] = {{"train", s.percent(s.train)}, {"val", s.percent(s.val)}, {"test", s.percent(s.test)}};
  auto& pc = j["per_class"] = nlohmann::ordered_json::object();
  for (const auto& [cls, c] : s.per_class) {
    pc[cls] = {{"train", c.train}, {"val", c.val}, {"test", c.test}, {"unassigned", c.unassigned}, {"total", c.total()}};
  }
  return j;
}

}  // namespace pldc::dataset
