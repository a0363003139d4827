#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "bct/datagen.hpp"
#include "bct/evalproto.hpp"
#include "bct/trainer.hpp"

namespace bct {

// Desk-scale defaults shared by the CLI recipes and the acceptance suite.
namespace defaults {

SyntheticSpec synthetic_spec();
EvalSettings eval_settings();
// Plain cosine-margin MLP on `fraction` of the training identities.
TrainRecipe recipe(const std::string& version, double fraction, std::uint64_t seed);
// The same, trained with the influence loss against an old model.
TrainRecipe bct_recipe(const std::string& version, double fraction, std::uint64_t seed,
                       InfluenceSet t_bct = InfluenceSet::Old);

}  // namespace defaults

// Features of every open-set sample the benchmark touches.
FeatureStore benchmark_features(const Checkpoint& ck, const Dataset& data,
                                const OpenSetBenchmark& bench, const EvalSettings& settings);

struct PairMetrics {
  EvalReport verify;
  EvalReport search;
};

// Queries (and first verification templates) from `query_ck`; gallery (and
// second templates) from `gallery_ck`.
PairMetrics evaluate_pair(const Checkpoint& query_ck, const Checkpoint& gallery_ck,
                          const Dataset& data, const OpenSetBenchmark& bench,
                          const EvalSettings& settings);
PairMetrics evaluate_pair(const FeatureStore& features, const std::string& query_version,
                          const std::string& gallery_version, const OpenSetBenchmark& bench,
                          const EvalSettings& settings);

struct CandidateResult {
  std::string name;
  std::string version;
  bool is_baseline = false;  // the candidate is the old model itself
  PairMetrics backward;      // (candidate, old)
  PairMetrics self;          // (candidate, candidate)
  bool compatible_verify = false;
  bool compatible_search = false;
  std::optional<double> gain_verify;
  std::optional<double> gain_search;
};

struct CompatReport {
  std::string old_version;
  std::string paragon_version;
  PairMetrics old_old;
  PairMetrics paragon;
  std::vector<CandidateResult> candidates;
};

CompatReport run_compat(const Checkpoint& old, const Checkpoint& paragon,
                        const std::vector<std::pair<std::string, const Checkpoint*>>& candidates,
                        const Dataset& data, const EvalSettings& settings);
nlohmann::json to_json(const CompatReport& report);

struct BackfillPoint {
  double fraction = 0.0;
  std::size_t backfilled_classes = 0;
  double search = 0.0;  // TPIR at the first FPIR target
  double rank1 = 0.0;
};

// Queries from `new_ck` against galleries where a growing share of classes
// is re-indexed with `new_ck` features; other classes keep `old_ck` ones.
std::vector<BackfillPoint> run_backfill_sweep(const Checkpoint& old_ck, const Checkpoint& new_ck,
                                              const Dataset& data, const EvalSettings& settings,
                                              const std::vector<double>& fractions,
                                              std::uint64_t seed);
std::string backfill_csv(const std::vector<BackfillPoint>& points);
std::vector<double> backfill_fractions(double step);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace bct
