#include "bct/evalproto.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "bct/errors.hpp"

namespace bct {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Largest count c in [0, n] with c / n <= target.
std::size_t admissible_count(std::size_t n, double target) {
  const double nd = static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::clamp(std::floor(target * nd), 0.0, nd));
  while (k < n && static_cast<double>(k + 1) / nd <= target) ++k;
  while (k > 0 && static_cast<double>(k) / nd > target) --k;
  return k;
}

std::string gallery_version_label(const Gallery& g) {
  std::set<std::string> versions;
  for (const auto& [c, p] : g.prototypes) versions.insert(p.source_version);
  if (versions.size() == 1) return *versions.begin();
  std::string label = "mixed(";
  bool first = true;
  for (const auto& v : versions) {
    label += (first ? "" : ",") + v;
    first = false;
  }
  return label + ")";
}

std::vector<double> feature_of(const FeatureStore& fs, const std::string& id,
                               const std::string& version) {
  return to_double(fs.at(id, version).embedding);
}

}  // namespace

std::string to_string(Protocol p) {
  return p == Protocol::Verify1v1 ? "verify_1v1" : "search_1vN";
}

double EvalReport::primary() const {
  if (operating_points.empty()) throw InvalidArgument("report has no operating points");
  return operating_points.front().achieved;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["protocol"] = to_string(r.protocol);
  j["query_version"] = r.query_version;
  j["gallery_version"] = r.gallery_version;
  j["num_positive"] = r.num_positive;
  j["num_negative"] = r.num_negative;
  j["operating_points"] = nlohmann::json::array();
  for (const auto& op : r.operating_points) {
    j["operating_points"].push_back({{"target", op.target},
                                     {"achieved", op.achieved},
                                     {"false_rate", op.false_rate},
                                     {"threshold", std::isfinite(op.threshold)
                                                       ? nlohmann::json(op.threshold)
                                                       : nlohmann::json(op.threshold > 0 ? "+inf" : "-inf")}});
  }
  if (!r.rank_rates.empty()) {
    nlohmann::json ranks = nlohmann::json::object();
    for (const auto& [k, v] : r.rank_rates) ranks["rank" + std::to_string(k)] = v;
    j["rank_rates"] = ranks;
  }
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : r.curve) curve.push_back({p.false_rate, p.true_rate});
  j["curve"] = curve;
  if (r.criterion_verdict) j["criterion_verdict"] = *r.criterion_verdict;
  if (r.update_gain) j["update_gain"] = *r.update_gain;
  return j;
}

std::string curve_csv(const EvalReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << (report.protocol == Protocol::Verify1v1 ? "far,tar\n" : "fpir,tpir\n");
  for (const auto& p : report.curve) out << p.false_rate << ',' << p.true_rate << '\n';
  return out.str();
}

OperatingPoint rate_at_target(std::span<const double> positive_scores, std::size_t positive_total,
                              std::span<const double> negative_scores, double target) {
  if (negative_scores.empty()) throw InvalidArgument("false rate undefined without negatives");
  if (positive_total == 0 || positive_scores.size() > positive_total) {
    throw InvalidArgument("true rate undefined without positives");
  }
  if (!(target >= 0.0 && target <= 1.0)) throw InvalidArgument("rate target must lie in [0, 1]");

  std::vector<double> neg(negative_scores.begin(), negative_scores.end());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  const std::size_t k = admissible_count(neg.size(), target);

  // Candidate thresholds are the negative scores themselves. Walk down to the
  // lowest one whose tie group still fits in the admissible count; with none,
  // the threshold sits just above the highest negative.
  std::size_t accepted_neg = 0;
  double threshold = std::nextafter(neg.front(), kInf);
  std::size_t i = 0;
  while (i < neg.size()) {
    std::size_t j = i;
    while (j < neg.size() && neg[j] == neg[i]) ++j;
    if (j > k) break;
    accepted_neg = j;
    threshold = neg[i];
    i = j;
  }

  OperatingPoint op;
  op.target = target;
  std::size_t tp = 0;
  for (double s : positive_scores) tp += s >= threshold;
  op.achieved = static_cast<double>(tp) / static_cast<double>(positive_total);
  op.false_rate = static_cast<double>(accepted_neg) / static_cast<double>(neg.size());
  op.threshold = threshold;
  return op;
}

std::vector<CurvePoint> roc_curve(std::span<const double> positive_scores,
                                  std::size_t positive_total,
                                  std::span<const double> negative_scores) {
  if (negative_scores.empty() || positive_total == 0) {
    throw InvalidArgument("curve needs both positives and negatives");
  }
  std::vector<std::pair<double, bool>> all;
  all.reserve(positive_scores.size() + negative_scores.size());
  for (double s : positive_scores) all.emplace_back(s, true);
  for (double s : negative_scores) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<CurvePoint> curve{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  const double n_pos = static_cast<double>(positive_total);
  const double n_neg = static_cast<double>(negative_scores.size());
  for (std::size_t i = 0; i < all.size();) {
    const double s = all[i].first;
    for (; i < all.size() && all[i].first == s; ++i) (all[i].second ? tp : fp)++;
    CurvePoint p{static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos};
    if (p.false_rate != curve.back().false_rate || p.true_rate != curve.back().true_rate) {
      curve.push_back(p);
    }
  }
  return curve;
}

EvalReport verify_1v1(const FeatureStore& features, const std::string& version_a,
                      const std::string& version_b, std::span<const VerificationPair> pairs,
                      std::span<const double> far_targets, Distance d) {
  std::vector<double> genuine, impostor;
  for (const auto& p : pairs) {
    const auto a = feature_of(features, p.first, version_a);
    const auto b = feature_of(features, p.second, version_b);
    const double dist = compare(d, a, b);
    const double score = d == Distance::Cosine ? 1.0 - dist : -dist;
    (p.genuine ? genuine : impostor).push_back(score);
  }
  if (impostor.empty()) throw InvalidArgument("verification needs at least one impostor pair");
  if (genuine.empty()) throw InvalidArgument("verification needs at least one genuine pair");
  EvalReport r;
  r.protocol = Protocol::Verify1v1;
  r.query_version = version_a;
  r.gallery_version = version_b;
  r.num_positive = genuine.size();
  r.num_negative = impostor.size();
  for (double t : far_targets) {
    r.operating_points.push_back(rate_at_target(genuine, genuine.size(), impostor, t));
  }
  r.curve = roc_curve(genuine, genuine.size(), impostor);
  return r;
}

EvalReport search_1vN(const FeatureStore& features, const std::string& query_version,
                      const Gallery& gallery, std::span<const SearchQuery> queries,
                      std::span<const double> fpir_targets, std::span<const int> ranks) {
  if (gallery.prototypes.empty()) throw InvalidArgument("search against an empty gallery");
  std::vector<double> mated;       // correctly matched in-gallery queries
  std::vector<double> non_mated;   // best score of out-of-gallery queries
  std::size_t in_gallery = 0;
  std::map<int, std::size_t> rank_hits;
  for (int k : ranks) {
    if (k < 1) throw InvalidArgument("ranks must be >= 1");
    rank_hits[k] = 0;
  }
  for (const auto& q : queries) {
    const auto f = feature_of(features, q.sample_id, query_version);
    const auto ranked = rank_classes(gallery, f);
    const double best = ranked.front().distance;
    const double score = gallery.distance == Distance::Cosine ? 1.0 - best : -best;
    if (!gallery.prototypes.count(q.class_id)) {
      non_mated.push_back(score);
      continue;
    }
    ++in_gallery;
    if (ranked.front().class_id == q.class_id) mated.push_back(score);
    for (auto& [k, hits] : rank_hits) {
      const auto limit = std::min<std::size_t>(static_cast<std::size_t>(k), ranked.size());
      for (std::size_t i = 0; i < limit; ++i) {
        if (ranked[i].class_id == q.class_id) {
          ++hits;
          break;
        }
      }
    }
  }
  if (non_mated.empty()) {
    throw InvalidArgument("FPIR undefined: no out-of-gallery queries");
  }
  if (in_gallery == 0) throw InvalidArgument("TPIR undefined: no in-gallery queries");
  EvalReport r;
  r.protocol = Protocol::Search1vN;
  r.query_version = query_version;
  r.gallery_version = gallery_version_label(gallery);
  r.num_positive = in_gallery;
  r.num_negative = non_mated.size();
  for (double t : fpir_targets) {
    r.operating_points.push_back(rate_at_target(mated, in_gallery, non_mated, t));
  }
  r.curve = roc_curve(mated, in_gallery, non_mated);
  for (const auto& [k, hits] : rank_hits) {
    r.rank_rates[k] = static_cast<double>(hits) / static_cast<double>(in_gallery);
  }
  return r;
}

bool check_empirical_criterion(double m_new_old, double m_old_old) {
  return m_new_old > m_old_old;
}

StrictCriterionResult check_strict_criterion(const EmbeddingModel& model_new,
                                             const EmbeddingModel& model_old,
                                             const DenseMatrix& samples,
                                             std::span<const std::int64_t> labels, Distance d) {
  if (labels.size() != samples.rows()) throw DimensionError("one label per sample required");
  const DenseMatrix zn = model_new.forward(samples);
  const DenseMatrix zo = model_old.forward(samples);
  StrictCriterionResult out;
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    for (std::size_t j = 0; j < samples.rows(); ++j) {
      if (i == j) continue;
      const bool same = labels[i] == labels[j];
      const double dn = compare(d, zn.row(i), zo.row(j));
      const double dold = distance(d, zo.row(i), zo.row(j));
      ++out.pairs_checked;
      if (same ? dn > dold : dn < dold) out.violations.push_back({i, j, same, dn, dold});
    }
  }
  out.satisfied = out.violations.empty();
  return out;
}

double update_gain(double m_new_old, double m_old_old, double m_paragon) {
  if (!check_empirical_criterion(m_new_old, m_old_old)) {
    throw InvalidGainError("update gain is undefined: the empirical compatibility criterion fails");
  }
  const double denom = m_paragon - m_old_old;
  if (denom == 0.0) throw InvalidGainError("update gain denominator is zero");
  if (denom < 0.0) throw InvalidGainError("paragon accuracy does not exceed the old model's");
  return (m_new_old - m_old_old) / denom;
}

void EvalSettings::validate() const {
  if (per_class_gallery < 1 || per_class_query < 1) {
    throw InvalidArgument("per-class gallery and query counts must be >= 1");
  }
  if (!(gallery_identity_fraction > 0.0 && gallery_identity_fraction < 1.0)) {
    throw InvalidArgument("gallery_identity_fraction must lie in (0, 1) to leave distractors");
  }
  if (verify_templates_per_class < 1 ||
      verify_templates_per_class > std::min(per_class_gallery, per_class_query)) {
    throw InvalidArgument("verify_templates_per_class must fit in both splits");
  }
  if (far_targets.empty() || fpir_targets.empty()) {
    throw InvalidArgument("at least one FAR and one FPIR target is required");
  }
}

OpenSetBenchmark build_benchmark(const Dataset& data, const EvalSettings& settings) {
  settings.validate();
  OpenSetBenchmark b;
  std::vector<std::int64_t> ids = data.openset_identities;
  std::sort(ids.begin(), ids.end());
  if (ids.size() < 2) throw InvalidArgument("open-set benchmark needs at least two identities");

  std::vector<std::int64_t> order = ids;
  std::mt19937_64 rng(settings.split_seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_gallery = static_cast<std::size_t>(
      std::ceil(settings.gallery_identity_fraction * static_cast<double>(ids.size()) - 1e-9));
  n_gallery = std::clamp<std::size_t>(n_gallery, 1, ids.size() - 1);
  b.gallery_identities.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_gallery));
  b.distractor_identities.assign(order.begin() + static_cast<std::ptrdiff_t>(n_gallery), order.end());
  std::sort(b.gallery_identities.begin(), b.gallery_identities.end());
  std::sort(b.distractor_identities.begin(), b.distractor_identities.end());

  const auto split = split_queries_galleries(data, ids, settings.per_class_gallery,
                                             settings.per_class_query, settings.split_seed);
  const std::set<std::int64_t> in_gallery(b.gallery_identities.begin(),
                                          b.gallery_identities.end());
  for (std::size_t i : split.gallery) {
    if (in_gallery.count(data.samples[i].class_id)) {
      b.gallery_samples.push_back(i);
      b.gallery_sample_ids.insert(data.samples[i].sample_id);
    }
  }
  for (std::size_t i : split.query) {
    b.queries.push_back({data.samples[i].sample_id, data.samples[i].class_id});
  }

  // Verification templates: the first few query-split samples of every
  // class against the first few gallery-split samples of every class.
  std::map<std::int64_t, std::vector<std::size_t>> firsts, seconds;
  for (std::size_t i : split.query) {
    auto& v = firsts[data.samples[i].class_id];
    if (v.size() < settings.verify_templates_per_class) v.push_back(i);
  }
  for (std::size_t i : split.gallery) {
    auto& v = seconds[data.samples[i].class_id];
    if (v.size() < settings.verify_templates_per_class) v.push_back(i);
  }
  for (const auto& [ca, va] : firsts) {
    for (std::size_t ia : va) {
      for (const auto& [cb, vb] : seconds) {
        for (std::size_t ib : vb) {
          b.pairs.push_back({data.samples[ia].sample_id, data.samples[ib].sample_id, ca == cb});
        }
      }
    }
  }

  std::set<std::size_t> all(split.gallery.begin(), split.gallery.end());
  all.insert(split.query.begin(), split.query.end());
  b.feature_samples.assign(all.begin(), all.end());
  return b;
}

}  // namespace bct
