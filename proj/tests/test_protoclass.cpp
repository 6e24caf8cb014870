#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "pldc/protoclass.hpp"
#include "pldc/random.hpp"

using namespace pldc;
using namespace pldc::protoclass;

namespace {

Embedding emb(std::string id, std::string label, std::vector<double> v) { return {std::move(id), std::move(label), std::move(v)}; }

long double ld_distance(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a[i]) - static_cast<long double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

std::string argmin_oracle(const std::vector<double>& q, const PrototypeSet& set) {
  std::string best;
  long double bd = 0;
  for (const auto& [label, v] : set.prototypes) {
    const auto d = ld_distance(q, v);
    if (best.empty() || d < bd) {
      best = label;
      bd = d;
    }
  }
  return best;
}

std::vector<double> random_vec(Rng& rng, std::size_t d, double sd = 1.0) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal(0, sd);
  return v;
}

}  // namespace

TEST(Embeddings, ParseRows) {
  std::stringstream ss("id,label,dim=4\na,x,1,2,3,4\nb,y,0.5,0,0,-1\nc,x,0,0,0,0\n");
  const auto rows = parse_embeddings(ss);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].label, "y");
  EXPECT_EQ(rows[1].vector, (std::vector<double>{0.5, 0, 0, -1}));
}

TEST(Embeddings, RaggedRowReportsLine) {
  std::stringstream ss("id,label,dim=4\na,x,1,2,3,4\nb,y,1,2,3\n");
  try {
    parse_embeddings(ss);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 3u);
  }
}

TEST(Embeddings, BadCells) {
  for (const char* body : {"id,label,dim=2\na,x,1,zz\n", "id,label,dim=2\na,x,1,nan\n", "id,label,dim=2\na,x,1,inf\n",
                           "nonsense\n", "id,label,dim=q\n"}) {
    std::stringstream ss(body);
    EXPECT_THROW(parse_embeddings(ss), ParseError) << body;
  }
}

TEST(Embeddings, RoundTripIsExact) {
  Rng rng(5);
  std::vector<Embedding> rows;
  for (int i = 0; i < 20; ++i) rows.push_back(emb("e" + std::to_string(i), "c" + std::to_string(i % 3), random_vec(rng, 7, 1e3)));
  rows[0].vector[0] = 0.1;
  rows[0].vector[1] = 1e-300;
  std::stringstream ss;
  write_embeddings(ss, rows);
  const auto back = parse_embeddings(ss);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].id, rows[i].id);
    EXPECT_EQ(back[i].vector, rows[i].vector);
  }
}

TEST(Distance, Basics) {
  const std::vector<double> a{0, 0}, b{3, 4};
  EXPECT_EQ(euclidean_distance(a, b), 5.0);
  EXPECT_EQ(euclidean_distance(b, b), 0.0);
  EXPECT_THROW(euclidean_distance(a, std::vector<double>{1}), DimensionError);
}

TEST(Distance, HighDimensionalAccuracy) {
  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    const auto x = random_vec(rng, 1920, 10.0), y = random_vec(rng, 1920, 10.0);
    const double d = euclidean_distance(x, y);
    const auto ref = ld_distance(x, y);
    EXPECT_LE(std::abs(static_cast<long double>(d) - ref) / ref, 1e-12L);
  }
}

TEST(Prototypes, OneShotIsTheSupport) {
  const auto set = build_prototypes({emb("a", "x", {1, 2}), emb("b", "y", {3, 4})}, {1, 0});
  EXPECT_EQ(set.prototypes.at("x"), (std::vector<double>{1, 2}));
  EXPECT_EQ(set.prototypes.at("y"), (std::vector<double>{3, 4}));
  EXPECT_EQ(set.dimension, 2u);
}

TEST(Prototypes, MeanOfShots) {
  const auto set = build_prototypes({emb("a", "x", {0, 0}), emb("b", "x", {2, 4})}, {2, 0});
  EXPECT_EQ(set.prototypes.at("x"), (std::vector<double>{1, 2}));
}

TEST(Prototypes, SampledShotsMatchBruteMean) {
  Rng rng(11);
  std::vector<Embedding> supports;
  for (int i = 0; i < 40; ++i) supports.push_back(emb("s" + std::to_string(i), i < 20 ? "a" : "b", random_vec(rng, 16)));
  const auto set = build_prototypes(supports, {5, 99});
  EXPECT_EQ(set.shots, 5u);
  // Shot selection is seeded per class.
  for (const auto& [label, proto] : set.prototypes) {
    std::vector<std::vector<double>> pool;
    for (const auto& s : supports)
      if (s.label == label) pool.push_back(s.vector);
    Rng pick(derive_seed(99, "shots/" + label, 5));
    const auto idx = sample_indices(pool.size(), 5, pick);
    for (std::size_t d = 0; d < 16; ++d) {
      long double m = 0;
      for (auto i : idx) m += pool[i][d];
      m /= 5;
      EXPECT_NEAR(proto[d], static_cast<double>(m), 1e-12);
    }
  }
  const auto again = build_prototypes(supports, {5, 99});
  EXPECT_EQ(again.prototypes, set.prototypes);
}

TEST(Prototypes, Errors) {
  EXPECT_THROW(build_prototypes({emb("a", "x", {1})}, {0, 0}), InvalidArgument);
  EXPECT_THROW(build_prototypes({}, {1, 0}), ValidationError);
  EXPECT_THROW(build_prototypes({emb("a", "", {1})}, {1, 0}), ValidationError);
  EXPECT_THROW(build_prototypes({emb("a", "x", {1}), emb("b", "y", {1, 2})}, {1, 0}), DimensionError);
  try {
    build_prototypes({emb("a", "x", {1}), emb("b", "x", {2}), emb("c", "rare", {3})}, {2, 0});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("rare"), std::string::npos);
  }
}

TEST(Predict, NearestPrototype) {
  const auto set = build_prototypes({emb("a", "A", {0, 0}), emb("b", "B", {10, 0})}, {1, 0});
  const auto p = predict(emb("q", "", {2, 1}), set);
  EXPECT_EQ(p.label, "A");
  EXPECT_NEAR(p.distances.at("A"), std::sqrt(5.0), 1e-15);
  EXPECT_NEAR(p.distances.at("B"), std::sqrt(65.0), 1e-15);
  EXPECT_EQ(predict(emb("q", "", {10, 0}), set).label, "B");
  EXPECT_THROW(predict(emb("q", "", {1}), set), DimensionError);
}

TEST(Predict, TiesGoToSmallestLabel) {
  const auto set = build_prototypes({emb("a", "zeta", {1, 0}), emb("b", "alpha", {-1, 0})}, {1, 0});
  EXPECT_EQ(predict(emb("q", "", {0, 5}), set).label, "alpha");
}

TEST(Predict, MatchesArgminOracle) {
  Rng rng(3);
  std::vector<Embedding> supports;
  for (int c = 0; c < 8; ++c) supports.push_back(emb("p" + std::to_string(c), "c" + std::to_string(c), random_vec(rng, 32)));
  const auto set = build_prototypes(supports, {1, 0});
  for (int i = 0; i < 1000; ++i) {
    const auto q = random_vec(rng, 32);
    ASSERT_EQ(predict(emb("q", "", q), set).label, argmin_oracle(q, set));
  }
}

TEST(Evaluate, PerfectAndClustered) {
  const auto set = build_prototypes({emb("a", "A", {0, 0}), emb("b", "B", {10, 10})}, {1, 0});
  const auto perfect = evaluate({emb("1", "A", {0, 0}), emb("2", "B", {10, 10})}, set);
  EXPECT_EQ(perfect.accuracy, 1.0);
  EXPECT_EQ(perfect.macro_f1, 1.0);

  Rng rng(17);
  std::vector<Embedding> queries;
  for (int i = 0; i < 200; ++i) {
    const bool a = i % 2 == 0;
    queries.push_back(emb("q", a ? "A" : "B", {(a ? 0 : 10) + rng.normal(0, 0.5), (a ? 0 : 10) + rng.normal(0, 0.5)}));
  }
  EXPECT_EQ(evaluate(queries, set).accuracy, 1.0);
  EXPECT_THROW(evaluate({emb("1", "", {0, 0})}, set), ValidationError);
}

TEST(Evaluate, UnknownQueryLabelCountsAsError) {
  const auto set = build_prototypes({emb("a", "A", {0, 0}), emb("b", "B", {10, 10})}, {1, 0});
  const auto r = evaluate({emb("1", "A", {0, 0}), emb("2", "C", {0, 0})}, set);
  EXPECT_EQ(r.accuracy, 0.5);
  EXPECT_EQ(r.per_class.size(), 3u);
}

TEST(Evaluate, ChanceLevelOnNoise) {
  Rng rng(23);
  std::vector<Embedding> supports;
  for (int c = 0; c < 4; ++c) supports.push_back(emb("p", "c" + std::to_string(c), random_vec(rng, 8)));
  const auto set = build_prototypes(supports, {1, 0});
  std::vector<Embedding> queries;
  for (int i = 0; i < 10000; ++i) queries.push_back(emb("q", "c" + std::to_string(rng.below(4)), random_vec(rng, 8)));
  EXPECT_NEAR(evaluate(queries, set).accuracy, 0.25, 0.02);
}

TEST(Prototypes, FileRoundTrip) {
  const auto set = build_prototypes({emb("a", "A", {0.25, 1}), emb("b", "B", {3, 4})}, {1, 0});
  std::stringstream ss;
  write_embeddings(ss, to_embeddings(set));
  const auto back = from_embeddings(parse_embeddings(ss));
  EXPECT_EQ(back.prototypes, set.prototypes);
  EXPECT_EQ(back.dimension, 2u);
}
