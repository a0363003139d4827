#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bct/datagen.hpp"
#include "bct/feature_store.hpp"
#include "bct/gallery.hpp"
#include "bct/model.hpp"

namespace bct {

enum class Protocol { Verify1v1, Search1vN };
std::string to_string(Protocol p);

struct OperatingPoint {
  double target = 0.0;      // FAR or FPIR target
  double achieved = 0.0;    // TAR or TPIR at that target
  double false_rate = 0.0;  // FAR or FPIR actually realized
  double threshold = 0.0;   // accept iff score >= threshold
};

struct CurvePoint {
  double false_rate = 0.0;
  double true_rate = 0.0;
};

struct EvalReport {
  Protocol protocol = Protocol::Search1vN;
  std::string query_version;
  std::string gallery_version;
  std::vector<OperatingPoint> operating_points;
  std::vector<CurvePoint> curve;
  std::map<int, double> rank_rates;  // search only: rank-k identification rate
  std::size_t num_positive = 0;      // genuine pairs / in-gallery queries
  std::size_t num_negative = 0;      // impostor pairs / out-of-gallery queries
  std::optional<bool> criterion_verdict;
  std::optional<double> update_gain;

  // TAR/TPIR at the first operating point.
  double primary() const;
};

nlohmann::json to_json(const EvalReport& report);
// "far,tar" or "fpir,tpir" header, then one row per curve point.
std::string curve_csv(const EvalReport& report);

// Rate of positives at the operating point for a false-rate target.
// Acceptance is score >= threshold. Candidate thresholds are the negative
// scores; the operating point is the lowest candidate whose empirical false
// rate stays within `target`, or a threshold just above every negative when
// no candidate qualifies.
// `positive_total` is the denominator for the true rate; entries of
// `positive_scores` are the scores that can be accepted (a search query
// matched to the wrong class is simply absent).
OperatingPoint rate_at_target(std::span<const double> positive_scores, std::size_t positive_total,
                              std::span<const double> negative_scores, double target);

// Every distinct (false rate, true rate) pair as the threshold sweeps down.
std::vector<CurvePoint> roc_curve(std::span<const double> positive_scores,
                                  std::size_t positive_total,
                                  std::span<const double> negative_scores);

struct VerificationPair {
  std::string first;   // looked up in the A features
  std::string second;  // looked up in the B features
  bool genuine = false;
};

// Similarity of features from version A (first template) against version B
// (second template); A may be wider than B under the first-K rule.
EvalReport verify_1v1(const FeatureStore& features, const std::string& version_a,
                      const std::string& version_b, std::span<const VerificationPair> pairs,
                      std::span<const double> far_targets, Distance d = Distance::Cosine);

struct SearchQuery {
  std::string sample_id;
  std::int64_t class_id = 0;
};

// Open-set search of version-A query features against a gallery. Queries
// whose class is absent from the gallery are the out-of-gallery set.
EvalReport search_1vN(const FeatureStore& features, const std::string& query_version,
                      const Gallery& gallery, std::span<const SearchQuery> queries,
                      std::span<const double> fpir_targets, std::span<const int> ranks = {});

// M(new, old) > M(old, old), strictly.
bool check_empirical_criterion(double m_new_old, double m_old_old);

struct StrictViolation {
  std::size_t i = 0;
  std::size_t j = 0;
  bool same_class = false;
  double new_old_distance = 0.0;
  double old_old_distance = 0.0;
};

struct StrictCriterionResult {
  bool satisfied = true;
  std::vector<StrictViolation> violations;
  std::size_t pairs_checked = 0;
};

// Pairwise check over all ordered pairs i != j: cross-model distances must
// not exceed old-model distances within a class, nor fall below them across
// classes. O(n^2); meant for small sample sets.
StrictCriterionResult check_strict_criterion(const EmbeddingModel& model_new,
                                             const EmbeddingModel& model_old,
                                             const DenseMatrix& samples,
                                             std::span<const std::int64_t> labels,
                                             Distance d = Distance::Cosine);

// (M(new, old) - M(old, old)) / (M(paragon) - M(old, old)); only defined
// when the empirical criterion holds.
double update_gain(double m_new_old, double m_old_old, double m_paragon);

// Open-set evaluation layout over a dataset's held-out identities.
struct EvalSettings {
  std::size_t per_class_gallery = 10;
  std::size_t per_class_query = 40;
  double gallery_identity_fraction = 0.75;
  std::size_t verify_templates_per_class = 5;
  std::uint64_t split_seed = 11;
  std::vector<double> far_targets{1e-2};
  std::vector<double> fpir_targets{1e-1};
  std::vector<int> ranks{1, 5};
  Distance distance = Distance::Cosine;
  void validate() const;
};

struct OpenSetBenchmark {
  std::vector<std::int64_t> gallery_identities;
  std::vector<std::int64_t> distractor_identities;
  std::vector<std::size_t> gallery_samples;  // dataset indices
  std::set<std::string> gallery_sample_ids;
  std::vector<SearchQuery> queries;
  std::vector<VerificationPair> pairs;
  // Every dataset index whose features an evaluation needs.
  std::vector<std::size_t> feature_samples;
};

OpenSetBenchmark build_benchmark(const Dataset& data, const EvalSettings& settings);

}  // namespace bct
