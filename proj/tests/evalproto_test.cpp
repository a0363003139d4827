#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "bct/errors.hpp"
#include "bct/evalproto.hpp"
#include "bct/layers.hpp"
#include "bct/model.hpp"
#include "testutil.hpp"

using namespace bct;
using namespace bct::testing_util;

namespace {

void add(FeatureStore& fs, const std::string& id, std::int64_t cls, const std::string& ver,
         std::vector<float> e) {
  fs.add({id, cls, ver, std::move(e)});
}

std::vector<float> unit(double angle) {
  return {static_cast<float>(std::cos(angle)), static_cast<float>(std::sin(angle))};
}

}  // namespace

TEST(RateAtTarget, HandExample) {
  const std::vector<double> gen{0.9, 0.8, 0.4}, imp{0.7, 0.3, 0.2, 0.1};
  const auto op = rate_at_target(gen, gen.size(), imp, 0.25);
  EXPECT_DOUBLE_EQ(op.achieved, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(op.false_rate, 0.25);
  EXPECT_DOUBLE_EQ(op.threshold, 0.7);
}

TEST(RateAtTarget, SeparatedScoresGiveFullRate) {
  const std::vector<double> gen{0.9, 0.95, 0.99}, imp{0.1, 0.5, 0.3};
  for (double far : {0.0, 1e-3, 0.1, 0.5, 1.0}) {
    EXPECT_DOUBLE_EQ(rate_at_target(gen, gen.size(), imp, far).achieved, 1.0);
  }
}

TEST(RateAtTarget, MatchesBruteForceSweep) {
  std::mt19937_64 rng(31);
  int instances = 0;
  for (int t = 0; t < 200; ++t, ++instances) {
    const bool coarse = t % 3 == 0;
    const auto pos = random_scores(rng, random_dim(rng, 1, 40), 1.5, coarse);
    const auto neg = random_scores(rng, random_dim(rng, 1, 60), 0.0, coarse);
    // Search-style instances drop some positives from the accepted set.
    const std::size_t total = pos.size() + (t % 2 ? random_dim(rng, 0, 5) : 0);
    for (double target : {0.0, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0}) {
      const auto op = rate_at_target(pos, total, neg, target);
      EXPECT_EQ(op.achieved, sweep_oracle(pos, total, neg, target));
      EXPECT_LE(op.false_rate, target);
    }
  }
  EXPECT_GE(instances, 50);
}

TEST(RateAtTarget, NondecreasingInTarget) {
  std::mt19937_64 rng(32);
  for (int t = 0; t < 50; ++t) {
    const auto pos = random_scores(rng, 30, 1.0, t % 2);
    const auto neg = random_scores(rng, 30, 0.0, t % 2);
    double prev = -1.0;
    for (int i = 0; i <= 20; ++i) {
      const double a = rate_at_target(pos, pos.size(), neg, i / 20.0).achieved;
      EXPECT_GE(a, prev);
      prev = a;
    }
  }
}

TEST(RateAtTarget, RejectsEmptyInputs) {
  const std::vector<double> some{0.5}, none;
  EXPECT_THROW(rate_at_target(some, 1, none, 0.1), InvalidArgument);
  EXPECT_THROW(rate_at_target(none, 0, some, 0.1), InvalidArgument);
  EXPECT_THROW(rate_at_target(some, 1, some, 1.5), InvalidArgument);
}

TEST(RocCurve, EndsAtFullRates) {
  const std::vector<double> gen{0.9, 0.8, 0.4}, imp{0.7, 0.3, 0.2, 0.1};
  const auto c = roc_curve(gen, gen.size(), imp);
  ASSERT_FALSE(c.empty());
  EXPECT_DOUBLE_EQ(c.back().false_rate, 1.0);
  EXPECT_DOUBLE_EQ(c.back().true_rate, 1.0);
  for (std::size_t i = 1; i < c.size(); ++i) {
    EXPECT_GE(c[i].false_rate, c[i - 1].false_rate);
    EXPECT_GE(c[i].true_rate, c[i - 1].true_rate);
  }
}

TEST(Verify, SameFeaturesAreSymmetricAndOrderInvariant) {
  std::mt19937_64 rng(33);
  FeatureStore fs;
  for (int i = 0; i < 12; ++i) {
    add(fs, "s" + std::to_string(i), i / 3, "a", unit(static_cast<double>(i / 3) + 0.1 * (i % 3)));
  }
  std::vector<VerificationPair> pairs;
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j)
      if (i != j) pairs.push_back({"s" + std::to_string(i), "s" + std::to_string(j), i / 3 == j / 3});
  const std::vector<double> far{0.05, 0.2};
  const auto r1 = verify_1v1(fs, "a", "a", pairs, far);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  const auto r2 = verify_1v1(fs, "a", "a", pairs, far);
  EXPECT_EQ(to_json(r1), to_json(r2));
  EXPECT_EQ(r1.num_positive, 12u * 2u);
}

TEST(Verify, WiderQueryIsTruncated) {
  FeatureStore fs;
  add(fs, "x", 0, "wide", {0.6f, 0.8f, 0.0f, 1.0f});
  add(fs, "y", 0, "narrow", {0.6f, 0.8f});
  add(fs, "z", 1, "narrow", {0.8f, -0.6f});
  const std::vector<VerificationPair> pairs{{"x", "y", true}, {"x", "z", false}};
  const std::vector<double> far{0.0};
  const auto r = verify_1v1(fs, "wide", "narrow", pairs, far);
  EXPECT_DOUBLE_EQ(r.primary(), 1.0);
}

TEST(Search, QueriesOnPrototypesGiveFullRate) {
  FeatureStore fs;
  for (int c = 0; c < 4; ++c) {
    add(fs, "g" + std::to_string(c), c, "v", unit(c * 0.7));
    add(fs, "q" + std::to_string(c), c, "v", unit(c * 0.7));
  }
  add(fs, "o", 9, "v", unit(0.35));
  const std::vector<std::int64_t> classes{0, 1, 2, 3};
  const auto g = build_prototypes(fs.subset({"g0", "g1", "g2", "g3"}), "v", classes);
  std::vector<SearchQuery> qs{{"q0", 0}, {"q1", 1}, {"q2", 2}, {"q3", 3}, {"o", 9}};
  const std::vector<double> fpir{0.0};
  const std::vector<int> ranks{1};
  const auto r = search_1vN(fs, "v", g, qs, fpir, ranks);
  EXPECT_DOUBLE_EQ(r.primary(), 1.0);
  EXPECT_DOUBLE_EQ(r.rank_rates.at(1), 1.0);
  EXPECT_EQ(r.num_negative, 1u);
}

TEST(Search, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(34);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 60; ++t) {
    const std::size_t k = random_dim(rng, 2, 5), n_gal = random_dim(rng, 2, 8);
    FeatureStore fs;
    Gallery g;
    std::vector<std::vector<double>> protos;
    for (std::size_t c = 0; c < n_gal; ++c) {
      std::vector<float> v(k);
      for (auto& x : v) x = static_cast<float>(n(rng));
      add(fs, "g" + std::to_string(c), static_cast<std::int64_t>(c), "v", v);
    }
    std::set<std::string> gids;
    std::vector<std::int64_t> gal_classes;
    for (std::size_t c = 0; c < n_gal; ++c) {
      gids.insert("g" + std::to_string(c));
      gal_classes.push_back(static_cast<std::int64_t>(c));
    }
    g = build_prototypes(fs.subset(gids), "v", gal_classes);
    std::vector<SearchQuery> qs;
    for (int q = 0; q < 50; ++q) {
      const auto cls = static_cast<std::int64_t>(random_dim(rng, 0, n_gal + 2));
      std::vector<float> v(k);
      for (auto& x : v) x = static_cast<float>(n(rng));
      const std::string id = "q" + std::to_string(q);
      add(fs, id, cls, "v", v);
      qs.push_back({id, cls});
    }
    // Exhaustive scan: best-scoring prototype per query, ties to the smaller id.
    std::vector<double> mated, non_mated;
    std::size_t in_gallery = 0;
    for (const auto& q : qs) {
      const auto f = to_double(fs.at(q.sample_id, "v").embedding);
      double best = -1e300;
      std::int64_t arg = -1;
      for (const auto& [cls, p] : g.prototypes) {
        const double s = 1.0 - distance(Distance::Cosine, f, p.vector);
        if (s > best) best = s, arg = cls;
      }
      if (!g.prototypes.count(q.class_id)) {
        non_mated.push_back(best);
      } else {
        ++in_gallery;
        if (arg == q.class_id) mated.push_back(best);
      }
    }
    if (non_mated.empty() || in_gallery == 0) continue;
    for (double target : {0.0, 0.1, 0.3, 1.0}) {
      const std::vector<double> fp{target};
      const auto r = search_1vN(fs, "v", g, qs, fp);
      EXPECT_EQ(r.primary(), sweep_oracle(mated, in_gallery, non_mated, target));
    }
  }
}

TEST(Criterion, EmpiricalExamples) {
  EXPECT_TRUE(check_empirical_criterion(80.25, 77.86));
  EXPECT_FALSE(check_empirical_criterion(77.26, 77.86));
  EXPECT_FALSE(check_empirical_criterion(0.5, 0.5));
}

TEST(Criterion, UpdateGainArithmetic) {
  EXPECT_NEAR(update_gain(80.25, 77.86, 86.96), 0.2626, 1e-4);
  EXPECT_NEAR(update_gain(67.23, 59.34, 76.88), 0.4498, 1e-4);
  EXPECT_DOUBLE_EQ(update_gain(0.9, 0.5, 0.9), 1.0);
  EXPECT_THROW(update_gain(0.4, 0.5, 0.9), InvalidGainError);
  EXPECT_THROW(update_gain(0.6, 0.5, 0.5), InvalidGainError);
}

TEST(Criterion, StrictHoldsForIdenticalModels) {
  std::mt19937_64 rng(35);
  EmbeddingModel m(3, {AffineSpec{3, 4, true}, ReluSpec{}, AffineSpec{4, 2, true}}, 3);
  const auto x = random_matrix(rng, 8, 3);
  const std::vector<std::int64_t> y{0, 0, 1, 1, 2, 2, 3, 3};
  const auto r = check_strict_criterion(m, m, x, y);
  EXPECT_TRUE(r.satisfied);
  EXPECT_TRUE(r.violations.empty());
  EXPECT_EQ(r.pairs_checked, 8u * 7u);
}

TEST(Criterion, StrictSingleClassChecksSameClassOnly) {
  std::mt19937_64 rng(36);
  EmbeddingModel a(3, {AffineSpec{3, 3, true}}, 1), b(3, {AffineSpec{3, 3, true}}, 2);
  const auto x = random_matrix(rng, 5, 3);
  const std::vector<std::int64_t> y(5, 7);
  const auto r = check_strict_criterion(a, b, x, y);
  for (const auto& v : r.violations) EXPECT_TRUE(v.same_class);
}

TEST(Criterion, StrictFindsViolationsForUnrelatedModels) {
  std::mt19937_64 rng(37);
  EmbeddingModel a(3, {AffineSpec{3, 3, true}}, 1), b(3, {AffineSpec{3, 3, true}}, 2);
  const auto x = random_matrix(rng, 10, 3);
  std::vector<std::int64_t> y;
  for (int i = 0; i < 10; ++i) y.push_back(i % 3);
  EXPECT_FALSE(check_strict_criterion(a, b, x, y).satisfied);
}
