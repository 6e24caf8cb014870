#pragma once

// Nearest-prototype (one-shot / few-shot) classification over precomputed
// embedding vectors.
//
// Embedding CSV: header "id,label,dim=D", then rows "id,label,v0,...,v(D-1)".
// An empty label marks an unlabeled query.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pldc/errors.hpp"
#include "pldc/metrics.hpp"
#include "pldc/random.hpp"
#include "pldc/text.hpp"

namespace pldc::protoclass {

struct Embedding {
  std::string id;
  std::string label;
  std::vector<double> vector;
};

inline void write_embeddings(std::ostream& os, const std::vector<Embedding>& rows) {
  const std::size_t dim = rows.empty() ? 0 : rows.front().vector.size();
  os << "id,label,dim=" << dim << '\n';
  for (const auto& e : rows) {
    if (e.vector.size() != dim) throw DimensionError("write_embeddings: mixed dimensions at '" + e.id + "'");
    os << e.id << ',' << e.label;
    for (double v : e.vector) os << ',' << text::fmt_real(v);
    os << '\n';
  }
}

inline std::vector<Embedding> parse_embeddings(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line) && text::blank(line)) ++lineno;
  ++lineno;
  const auto head = text::split_csv(line);
  if (head.size() != 3 || head[0] != "id" || head[1] != "label" || head[2].rfind("dim=", 0) != 0) {
    throw ParseError("embedding header must be 'id,label,dim=D'", lineno);
  }
  std::size_t dim = 0;
  try {
    const double d = text::parse_real(head[2].substr(4));
    if (d < 1 || d != std::floor(d)) throw ParseError("bad dim");
    dim = static_cast<std::size_t>(d);
  } catch (const ParseError&) {
    throw ParseError("embedding header: bad dimension '" + head[2] + "'", lineno);
  }

  std::vector<Embedding> out;
  while (std::getline(is, line)) {
    ++lineno;
    if (text::blank(line)) continue;
    auto cells = text::split_csv(line);
    if (cells.size() != dim + 2) {
      throw ParseError("expected " + std::to_string(dim) + " values, got " +
                           std::to_string(cells.size() < 2 ? 0 : cells.size() - 2),
                       lineno);
    }
    Embedding e{std::move(cells[0]), std::move(cells[1]), {}};
    e.vector.reserve(dim);
    for (std::size_t i = 2; i < cells.size(); ++i) {
      double v;
      try {
        v = text::parse_real(cells[i]);
      } catch (const ParseError& err) {
        throw ParseError(err.what(), lineno);
      }
      if (!std::isfinite(v)) throw ParseError("non-finite value", lineno);
      e.vector.push_back(v);
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<Embedding> load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return parse_embeddings(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

namespace detail {

// Pairwise summation of (x_i - y_i)^2 over [lo, hi).
inline double pairwise_sq(std::span<const double> x, std::span<const double> y, std::size_t lo, std::size_t hi) {
  if (hi - lo <= 16) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      const double d = x[i] - y[i];
      s += d * d;
    }
    return s;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_sq(x, y, lo, mid) + pairwise_sq(x, y, mid, hi);
}

}  // namespace detail

inline double euclidean_distance(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw DimensionError("euclidean_distance: " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  }
  return std::sqrt(detail::pairwise_sq(x, y, 0, x.size()));
}

struct ShotConfig {
  std::size_t k = 1;
  std::uint64_t seed = 0;
};

struct PrototypeSet {
  std::size_t dimension = 0;
  std::size_t shots = 0;
  std::map<std::string, std::vector<double>> prototypes;  // ordered by label
};

/// Picks k supports per class (seeded; all of them when exactly k exist) and
/// averages them component-wise.
inline PrototypeSet build_prototypes(const std::vector<Embedding>& supports, const ShotConfig& cfg) {
  if (cfg.k == 0) throw InvalidArgument("build_prototypes: k must be >= 1");
  if (supports.empty()) throw ValidationError("build_prototypes: no supports");
  const std::size_t dim = supports.front().vector.size();
  std::map<std::string, std::vector<const Embedding*>> by_class;
  for (const auto& e : supports) {
    if (e.label.empty()) throw ValidationError("build_prototypes: support '" + e.id + "' has no label");
    if (e.vector.size() != dim) throw DimensionError("build_prototypes: support '" + e.id + "' has wrong dimension");
    by_class[e.label].push_back(&e);
  }
  PrototypeSet set{dim, cfg.k, {}};
  for (const auto& [label, members] : by_class) {
    if (members.size() < cfg.k) {
      throw ValidationError("class '" + label + "' has " + std::to_string(members.size()) + " supports, needs " +
                            std::to_string(cfg.k));
    }
    std::vector<std::size_t> pick;
    if (members.size() == cfg.k) {
      for (std::size_t i = 0; i < cfg.k; ++i) pick.push_back(i);
    } else {
      Rng rng(derive_seed(cfg.seed, "shots/" + label, cfg.k));
      pick = sample_indices(members.size(), cfg.k, rng);
    }
    std::vector<double> mean(dim, 0.0);
    for (auto i : pick) {
      for (std::size_t d = 0; d < dim; ++d) mean[d] += members[i]->vector[d];
    }
    for (auto& v : mean) v /= static_cast<double>(cfg.k);
    set.prototypes.emplace(label, std::move(mean));
  }
  return set;
}

/// Prototypes as embeddings (id = label), for saving in the embedding CSV format.
inline std::vector<Embedding> to_embeddings(const PrototypeSet& set) {
  std::vector<Embedding> out;
  for (const auto& [label, v] : set.prototypes) out.push_back({label, label, v});
  return out;
}

inline PrototypeSet from_embeddings(const std::vector<Embedding>& rows, std::size_t shots = 1) {
  if (rows.empty()) throw ValidationError("prototype file is empty");
  PrototypeSet set{rows.front().vector.size(), shots, {}};
  for (const auto& e : rows) {
    const auto& label = e.label.empty() ? e.id : e.label;
    if (!set.prototypes.emplace(label, e.vector).second) throw ValidationError("duplicate prototype '" + label + "'");
  }
  return set;
}

struct Prediction {
  std::string label;
  std::map<std::string, double> distances;
};

/// Nearest prototype; equal distances resolve to the lexicographically smallest label.
inline Prediction predict(const Embedding& query, const PrototypeSet& protos) {
  if (query.vector.size() != protos.dimension) {
    throw DimensionError("predict: query '" + query.id + "' has dimension " + std::to_string(query.vector.size()) +
                         ", prototypes " + std::to_string(protos.dimension));
  }
  Prediction p;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [label, proto] : protos.prototypes) {
    const double d = euclidean_distance(query.vector, proto);
    p.distances.emplace(label, d);
    if (d < best) {
      best = d;
      p.label = label;
    }
  }
  return p;
}

inline metrics::MetricReport evaluate(const std::vector<Embedding>& queries, const PrototypeSet& protos) {
  std::vector<std::string> labels;
  for (const auto& [label, _] : protos.prototypes) labels.push_back(label);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& q : queries) {
    if (q.label.empty()) throw ValidationError("evaluate: query '" + q.id + "' has no label");
    if (std::find(labels.begin(), labels.end(), q.label) == labels.end()) {
      labels.push_back(q.label);
    }
    pairs.emplace_back(q.label, predict(q, protos).label);
  }
  std::sort(labels.begin(), labels.end());
  return metrics::compute_report(metrics::confusion_from_pairs(pairs, labels));
}

}  // namespace pldc::protoclass
