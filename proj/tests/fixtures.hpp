#pragma once

// Synthetic manifests and fixture loaders shared by the test binaries.

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pldc/dataset.hpp"
#include "pldc/manifest.hpp"
#include "pldc/text.hpp"

namespace fixtures {

inline std::string data_path(const std::string& rel) { return std::string(PLDC_DATA_DIR) + "/" + rel; }

inline std::vector<std::vector<std::string>> read_csv(const std::string& rel, bool skip_header = true) {
  std::ifstream in(data_path(rel));
  if (!in) throw std::runtime_error("missing fixture " + rel);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (pldc::text::blank(line)) continue;
    if (skip_header) {
      skip_header = false;
      continue;
    }
    rows.push_back(pldc::text::split_csv(line));
  }
  return rows;
}

// PLDC-6 class sizes, in table order.
inline const std::vector<std::pair<std::string, std::size_t>>& pldc6_classes() {
  static const std::vector<std::pair<std::string, std::size_t>> c = {
      {"Soybean Healthy", 896},       {"Soybean Caterpillar", 3309},    {"Soybean Diabrotica speciosa", 2205},
      {"Bean Healthy", 428},          {"Bean Angular Leaf Spot", 432},  {"Bean Bean Rust", 436}};
  return c;
}

inline pldc::Manifest manifest_from_counts(const std::vector<std::pair<std::string, std::size_t>>& classes,
                                           pldc::Split split = pldc::Split::unassigned) {
  pldc::Manifest m;
  for (const auto& [cls, n] : classes) {
    for (std::size_t i = 0; i < n; ++i) {
      pldc::ImageRecord r;
      r.id = cls + "/" + std::to_string(i);
      r.source_dataset = "synthetic";
      r.original_class = cls;
      r.final_class = cls;
      r.split = split;
      r.path = r.id + ".png";
      r.width = r.height = 224;
      m.records.push_back(std::move(r));
    }
  }
  return m;
}

struct SplitCell {
  std::string ratio;  // "0.1" ...
  std::string cls;
  long train, test;
};

inline std::vector<SplitCell> pldc6_split_table() {
  std::vector<SplitCell> out;
  for (const auto& row : read_csv("fixtures/pldc6_splits.csv")) {
    out.push_back({row[0], row[1], std::stol(row[2]), std::stol(row[3])});
  }
  return out;
}

// 80 post-cleanup classes whose 80-20 holdout leaves 24,507 test images:
// 53 classes of 1,530 (306 test) and 27 of 1,535 (307 test).
inline std::vector<std::pair<std::string, std::size_t>> pldc80_post_cleanup_counts() {
  std::vector<std::pair<std::string, std::size_t>> out;
  std::ifstream in(data_path("pldc80_classes.txt"));
  std::string line;
  std::size_t i = 0;
  while (std::getline(in, line)) {
    if (pldc::text::blank(line)) continue;
    out.emplace_back(line, i < 53 ? 1530 : 1535);
    ++i;
  }
  return out;
}

inline std::vector<std::string> pldc80_roster() {
  std::vector<std::string> out;
  std::ifstream in(data_path("pldc80_classes.txt"));
  std::string line;
  while (std::getline(in, line)) {
    if (!pldc::text::blank(line)) out.push_back(line);
  }
  return out;
}

// The merged source classes before cleanup: the 75 roster classes untouched by
// merges, the 10 merge inputs and the 10 deletion targets (95 classes).
inline std::map<std::string, std::size_t> pre_cleanup_classes(const std::vector<pldc::dataset::ClassRule>& rules) {
  using pldc::dataset::ClassRule;
  using pldc::dataset::DeleteReason;
  std::map<std::string, std::size_t> classes;
  std::vector<std::string> merged_into;
  for (const auto& r : rules) {
    if (r.kind == ClassRule::Kind::merge) {
      classes[r.class_a] = 250;
      classes[r.class_b] = 900;
      merged_into.push_back(r.into);
    } else {
      classes[r.cls] = r.reason == DeleteReason::too_small ? 150 : 700;
    }
  }
  for (const auto& name : pldc80_roster()) {
    if (std::find(merged_into.begin(), merged_into.end(), name) == merged_into.end()) classes[name] = 1200;
  }
  return classes;
}

}  // namespace fixtures
