#include <gtest/gtest.h>

#include "bct/errors.hpp"
#include "bct/experiment.hpp"

using namespace bct;

namespace {

struct Small {
  Dataset data;
  EvalSettings settings;
  Checkpoint old, fresh, beta;
};

TrainRecipe small_recipe(const std::string& v, double f, std::uint64_t seed) {
  TrainRecipe r = defaults::recipe(v, f, seed);
  r.hidden = {24};
  r.embed_dim = 6;
  r.sgd.epochs = 8;
  r.sgd.learning_rate_schedule = {{0, 0.1}, {6, 0.01}};
  return r;
}

const Small& small() {
  static const Small s = [] {
    Small out;
    SyntheticSpec spec;
    spec.num_train_identities = 10;
    spec.num_openset_identities = 8;
    spec.samples_per_identity = 14;
    spec.input_dim = 12;
    spec.rng_seed = 5;
    out.data = generate(spec);
    out.settings.per_class_gallery = 4;
    out.settings.per_class_query = 10;
    out.settings.verify_templates_per_class = 3;
    out.old = train(small_recipe("old", 0.5, 1), out.data);
    out.fresh = train(small_recipe("fresh", 1.0, 2), out.data);
    auto rb = small_recipe("beta", 1.0, 3);
    rb.bct_mode = BctMode::Influence;
    rb.lambda = 1.0;
    out.beta = train(rb, out.data, out.old);
    return out;
  }();
  return s;
}

}  // namespace

TEST(Spearman, HandExamples) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  // Ties share the average rank: ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4).
  EXPECT_NEAR(spearman({1, 2, 2, 3}, {1, 2, 3, 4}), 0.9486832980505138, 1e-12);
  EXPECT_THROW(spearman({1, 2}, {1, 2, 3}), InvalidArgument);
  // A flat series carries no monotone trend.
  EXPECT_DOUBLE_EQ(spearman({1, 1, 1}, {1, 2, 3}), 0.0);
}

TEST(Spearman, InvariantUnderMonotoneTransform) {
  std::vector<double> a{0.3, 0.1, 0.7, 0.5, 0.9}, b{2, 1, 5, 3, 4}, cubed;
  for (double v : a) cubed.push_back(v * v * v + 1.0);
  EXPECT_DOUBLE_EQ(spearman(a, b), spearman(cubed, b));
}

TEST(Backfill, FractionsGrid) {
  const auto f = backfill_fractions(0.25);
  EXPECT_EQ(f, (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
  EXPECT_THROW(backfill_fractions(0.0), InvalidArgument);
}

TEST(Backfill, EndpointsMatchPureGalleries) {
  const auto& s = small();
  const auto pts = run_backfill_sweep(s.old, s.beta, s.data, s.settings, {0.0, 0.5, 1.0}, 3);
  ASSERT_EQ(pts.size(), 3u);
  const auto bench = build_benchmark(s.data, s.settings);
  const auto backward = evaluate_pair(s.beta, s.old, s.data, bench, s.settings);
  const auto self = evaluate_pair(s.beta, s.beta, s.data, bench, s.settings);
  EXPECT_EQ(pts[0].search, backward.search.primary());
  EXPECT_EQ(pts[2].search, self.search.primary());
  EXPECT_EQ(pts[0].backfilled_classes, 0u);
  EXPECT_EQ(pts[2].backfilled_classes, bench.gallery_identities.size());
  EXPECT_EQ(pts[1].backfilled_classes, (bench.gallery_identities.size() + 1) / 2);
  EXPECT_THROW(run_backfill_sweep(s.old, s.old, s.data, s.settings, {0.0}, 1), InvalidArgument);
}

TEST(Compat, OldAgainstItselfIsBaseline) {
  const auto& s = small();
  const auto rep = run_compat(s.old, s.fresh, {{"old", &s.old}, {"beta", &s.beta}}, s.data,
                              s.settings);
  const auto j = to_json(rep);
  ASSERT_EQ(j["candidates"].size(), 2u);
  EXPECT_EQ(j["candidates"][0]["verdict"], "baseline");
  EXPECT_FALSE(j["candidates"][0].contains("update_gain"));
  EXPECT_TRUE(j["candidates"][1]["verdict"].is_object());
  EXPECT_TRUE(j["candidates"][1].contains("update_gain"));
  EXPECT_EQ(rep.candidates[0].backward.search.primary(), rep.old_old.search.primary());
}

TEST(Compat, VerdictMatchesMetrics) {
  const auto& s = small();
  const auto rep = run_compat(s.old, s.fresh, {{"beta", &s.beta}, {"fresh", &s.fresh}}, s.data,
                              s.settings);
  for (const auto& c : rep.candidates) {
    EXPECT_EQ(c.compatible_search,
              c.backward.search.primary() > rep.old_old.search.primary()) << c.name;
    EXPECT_EQ(c.compatible_verify,
              c.backward.verify.primary() > rep.old_old.verify.primary()) << c.name;
    EXPECT_EQ(c.gain_search.has_value(), c.compatible_search &&
                                             rep.paragon.search.primary() >
                                                 rep.old_old.search.primary());
    if (c.gain_search) {
      EXPECT_NEAR(*c.gain_search,
                  (c.backward.search.primary() - rep.old_old.search.primary()) /
                      (rep.paragon.search.primary() - rep.old_old.search.primary()),
                  1e-12);
    }
  }
}

TEST(Compat, EvaluationIsDeterministic) {
  const auto& s = small();
  const auto bench = build_benchmark(s.data, s.settings);
  const auto a = evaluate_pair(s.beta, s.old, s.data, bench, s.settings);
  const auto b = evaluate_pair(s.beta, s.old, s.data, bench, s.settings);
  EXPECT_EQ(a.search.primary(), b.search.primary());
  EXPECT_EQ(a.verify.primary(), b.verify.primary());
  EXPECT_EQ(a.search.rank_rates, b.search.rank_rates);
}

TEST(DeskBenchmark, PlainModelLearnsTheTrainingIdentities) {
  const Dataset data = generate(defaults::synthetic_spec());
  const auto ck = train(defaults::recipe("plain", 1.0, 1), data);
  EXPECT_GT(ck.log.back().train_accuracy, 0.9);
}

// Backward accuracy is near chance without the influence term and beats the
// old model's own accuracy once the term has full weight.
TEST(DeskBenchmark, InfluenceWeightMonotonicity) {
  const Dataset data = generate(defaults::synthetic_spec());
  const EvalSettings settings = defaults::eval_settings();
  const auto bench = build_benchmark(data, settings);
  const Checkpoint old = train(defaults::recipe("old", 0.5, 101), data);
  const double oo = evaluate_pair(old, old, data, bench, settings).search.primary();
  for (double lambda : {0.0, 0.5, 1.0, 4.0}) {
    TrainRecipe r = defaults::bct_recipe("new", 1.0, 303);
    r.lambda = lambda;
    const auto ck = train(r, data, old);
    const double bo = evaluate_pair(ck, old, data, bench, settings).search.primary();
    if (lambda == 0.0) EXPECT_LT(bo, 0.25 * oo) << "lambda " << lambda;
    if (lambda >= 1.0) EXPECT_GT(bo, oo) << "lambda " << lambda;
  }
}
