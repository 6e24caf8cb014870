#pragma once

// ImageRecord / Manifest and their JSON Lines encoding.
//
// One record per line, keys: id, source_dataset, original_class, final_class,
// split, path, width, height and, for derived images only, lineage
// {parent, op, seed}. Manifest metadata (seed, creation parameters) is kept
// in a sidecar JSON document so every line of the manifest is a record.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "pldc/errors.hpp"

namespace pldc {

enum class Split { unassigned, train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::unassigned: return "unassigned";
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "unassigned") return Split::unassigned;
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ParseError("unknown split '" + s + "'");
}

struct Lineage {
  std::string parent;
  std::string op;  // AugOp descriptor, e.g. "brightness(-0.75)"
  std::uint64_t seed = 0;
  friend bool operator==(const Lineage&, const Lineage&) = default;
};

struct ImageRecord {
  std::string id;
  std::string source_dataset;
  std::string original_class;
  std::string final_class;
  Split split = Split::unassigned;
  std::optional<Lineage> lineage;
  std::string path;
  std::int64_t width = 0;
  std::int64_t height = 0;

  bool augmented() const { return lineage.has_value(); }
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Manifest {
  std::vector<ImageRecord> records;
  std::uint64_t global_seed = 0;
  nlohmann::ordered_json parameters = nlohmann::ordered_json::object();

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

/// Per final_class record counts, optionally restricted to one split.
inline std::map<std::string, std::size_t> class_counts(const Manifest& m, std::optional<Split> split = std::nullopt) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : m.records) {
    if (!split || r.split == *split) ++counts[r.final_class];
  }
  return counts;
}

/// Throws ValidationError on duplicate ids or augmented test records.
inline void check_invariants(const Manifest& m) {
  std::unordered_set<std::string> seen;
  for (const auto& r : m.records) {
    if (!seen.insert(r.id).second) throw ValidationError("duplicate record id '" + r.id + "'");
    if (r.augmented() && r.split == Split::test) {
      throw ValidationError("augmented record '" + r.id + "' assigned to test split");
    }
  }
}

// ---------------------------------------------------------------------------
// JSON Lines

inline nlohmann::ordered_json to_json(const ImageRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["source_dataset"] = r.source_dataset;
  j["original_class"] = r.original_class;
  j["final_class"] = r.final_class;
  j["split"] = to_string(r.split);
  if (r.lineage) {
    j["lineage"] = {{"parent", r.lineage->parent}, {"op", r.lineage->op}, {"seed", r.lineage->seed}};
  }
  j["path"] = r.path;
  j["width"] = r.width;
  j["height"] = r.height;
  return j;
}

inline ImageRecord record_from_json(const nlohmann::json& j) {
  for (const char* key : {"id", "source_dataset", "original_class", "final_class", "split", "path"}) {
    if (!j.contains(key) || !j[key].is_string()) {
      throw ParseError(std::string("missing or non-string key '") + key + "'");
    }
  }
  ImageRecord r;
  r.id = j["id"];
  r.source_dataset = j["source_dataset"];
  r.original_class = j["original_class"];
  r.final_class = j["final_class"];
  r.split = parse_split(j["split"]);
  r.path = j["path"];
  r.width = j.value("width", std::int64_t{0});
  r.height = j.value("height", std::int64_t{0});
  if (j.contains("lineage") && !j["lineage"].is_null()) {
    const auto& l = j["lineage"];
    r.lineage = Lineage{l.at("parent").get<std::string>(), l.at("op").get<std::string>(),
                        l.at("seed").get<std::uint64_t>()};
  }
  return r;
}

inline void write_jsonl(std::ostream& os, const std::vector<ImageRecord>& records) {
  for (const auto& r : records) os << to_json(r).dump() << '\n';
}

inline std::vector<ImageRecord> read_jsonl(std::istream& is) {
  std::vector<ImageRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), lineno);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return out;
}

inline nlohmann::ordered_json metadata_json(const Manifest& m) {
  nlohmann::ordered_json j;
  j["global_seed"] = m.global_seed;
  j["records"] = m.records.size();
  j["parameters"] = m.parameters;
  return j;
}

inline std::filesystem::path metadata_path(const std::filesystem::path& manifest_path) {
  auto p = manifest_path;
  p += ".meta.json";
  return p;
}

/// Writes the records to `path` and metadata to `path` + ".meta.json".
inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  write_jsonl(out, m.records);
  std::ofstream meta(metadata_path(path), std::ios::binary | std::ios::trunc);
  if (!meta) throw IoError("cannot write " + metadata_path(path).string());
  meta << metadata_json(m).dump(2) << '\n';
  if (!out || !meta) throw IoError("write failed: " + path.string());
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Manifest m;
  try {
    m.records = read_jsonl(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  std::ifstream meta(metadata_path(path));
  if (meta) {
    auto j = nlohmann::ordered_json::parse(meta, nullptr, false);
    if (!j.is_discarded()) {
      m.global_seed = j.value("global_seed", std::uint64_t{0});
      if (j.contains("parameters")) m.parameters = j["parameters"];
    }
  }
  return m;
}

}  // namespace pldc
