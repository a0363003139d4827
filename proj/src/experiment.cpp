#include "bct/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "bct/errors.hpp"

namespace bct {

namespace defaults {

SyntheticSpec synthetic_spec() { return SyntheticSpec{}; }

EvalSettings eval_settings() { return EvalSettings{}; }

TrainRecipe recipe(const std::string& version, double fraction, std::uint64_t seed) {
  TrainRecipe r;
  r.version = version;
  r.hidden = {64, 64};
  r.embed_dim = 16;
  r.head = HeadSpec{HeadVariant::CosineMargin, 16.0, 0.25};
  r.data_fraction = fraction;
  r.sgd.learning_rate_schedule = {{0, 0.05}, {20, 0.005}, {25, 0.0005}};
  // Strong decay keeps the embedding smooth between training identities,
  // which is what lets compatibility carry over to unseen ones.
  r.sgd.weight_decay = 0.3;
  r.sgd.batch_size = 64;
  r.sgd.epochs = 30;
  r.sgd.rng_seed = seed;
  return r;
}

TrainRecipe bct_recipe(const std::string& version, double fraction, std::uint64_t seed,
                       InfluenceSet t_bct) {
  TrainRecipe r = recipe(version, fraction, seed);
  r.bct_mode = BctMode::Influence;
  r.t_bct = t_bct;
  r.lambda = 1.0;
  return r;
}

}  // namespace defaults

FeatureStore benchmark_features(const Checkpoint& ck, const Dataset& data,
                                const OpenSetBenchmark& bench, const EvalSettings& settings) {
  return extract_features(ck, data, bench.feature_samples,
                          settings.distance == Distance::Cosine);
}

PairMetrics evaluate_pair(const FeatureStore& features, const std::string& query_version,
                          const std::string& gallery_version, const OpenSetBenchmark& bench,
                          const EvalSettings& settings) {
  PairMetrics m;
  m.verify = verify_1v1(features, query_version, gallery_version, bench.pairs,
                        settings.far_targets, settings.distance);
  const Gallery gallery = build_prototypes(features.subset(bench.gallery_sample_ids),
                                           gallery_version, bench.gallery_identities,
                                           settings.distance);
  m.search = search_1vN(features, query_version, gallery, bench.queries, settings.fpir_targets,
                        settings.ranks);
  return m;
}

PairMetrics evaluate_pair(const Checkpoint& query_ck, const Checkpoint& gallery_ck,
                          const Dataset& data, const OpenSetBenchmark& bench,
                          const EvalSettings& settings) {
  FeatureStore fs = benchmark_features(query_ck, data, bench, settings);
  if (gallery_ck.version != query_ck.version) {
    fs.merge(benchmark_features(gallery_ck, data, bench, settings));
  }
  return evaluate_pair(fs, query_ck.version, gallery_ck.version, bench, settings);
}

CompatReport run_compat(const Checkpoint& old, const Checkpoint& paragon,
                        const std::vector<std::pair<std::string, const Checkpoint*>>& candidates,
                        const Dataset& data, const EvalSettings& settings) {
  const OpenSetBenchmark bench = build_benchmark(data, settings);
  CompatReport rep;
  rep.old_version = old.version;
  rep.paragon_version = paragon.version;

  FeatureStore fs = benchmark_features(old, data, bench, settings);
  auto ensure = [&](const Checkpoint& ck) {
    if (fs.dim_of(ck.version)) return;
    fs.merge(benchmark_features(ck, data, bench, settings));
  };
  ensure(paragon);
  rep.old_old = evaluate_pair(fs, old.version, old.version, bench, settings);
  rep.paragon = evaluate_pair(fs, paragon.version, paragon.version, bench, settings);

  for (const auto& [name, ck] : candidates) {
    CandidateResult c;
    c.name = name;
    c.version = ck->version;
    if (ck->version == old.version && !(*ck == old)) {
      throw InvalidArgument("candidate '" + name + "' reuses the old version tag '" +
                            old.version + "' with different parameters");
    }
    ensure(*ck);
    c.is_baseline = ck->version == old.version;
    c.backward = evaluate_pair(fs, ck->version, old.version, bench, settings);
    c.self = evaluate_pair(fs, ck->version, ck->version, bench, settings);
    if (!c.is_baseline) {
      const double vo = rep.old_old.verify.primary(), so = rep.old_old.search.primary();
      const double vp = rep.paragon.verify.primary(), sp = rep.paragon.search.primary();
      c.compatible_verify = check_empirical_criterion(c.backward.verify.primary(), vo);
      c.compatible_search = check_empirical_criterion(c.backward.search.primary(), so);
      if (c.compatible_verify && vp > vo) {
        c.gain_verify = update_gain(c.backward.verify.primary(), vo, vp);
      }
      if (c.compatible_search && sp > so) {
        c.gain_search = update_gain(c.backward.search.primary(), so, sp);
      }
      c.backward.verify.criterion_verdict = c.compatible_verify;
      c.backward.search.criterion_verdict = c.compatible_search;
      c.backward.verify.update_gain = c.gain_verify;
      c.backward.search.update_gain = c.gain_search;
    }
    rep.candidates.push_back(std::move(c));
  }
  return rep;
}

namespace {

nlohmann::json metric_summary(const PairMetrics& m) {
  nlohmann::json j = {{"verify_tar", m.verify.primary()}, {"search_tpir", m.search.primary()}};
  for (const auto& [k, v] : m.search.rank_rates) j["search_rank" + std::to_string(k)] = v;
  return j;
}

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json();
}

}  // namespace

nlohmann::json to_json(const CompatReport& r) {
  nlohmann::json j;
  j["old_version"] = r.old_version;
  j["paragon_version"] = r.paragon_version;
  j["old_old"] = metric_summary(r.old_old);
  j["paragon"] = metric_summary(r.paragon);
  j["candidates"] = nlohmann::json::array();
  for (const auto& c : r.candidates) {
    nlohmann::json cj;
    cj["name"] = c.name;
    cj["version"] = c.version;
    cj["backward"] = metric_summary(c.backward);
    cj["self"] = metric_summary(c.self);
    if (c.is_baseline) {
      cj["verdict"] = "baseline";
    } else {
      cj["verdict"] = {{"verify", c.compatible_verify}, {"search", c.compatible_search}};
      cj["update_gain"] = {{"verify", optional_number(c.gain_verify)},
                           {"search", optional_number(c.gain_search)}};
    }
    j["candidates"].push_back(cj);
  }
  return j;
}

std::vector<BackfillPoint> run_backfill_sweep(const Checkpoint& old_ck, const Checkpoint& new_ck,
                                              const Dataset& data, const EvalSettings& settings,
                                              const std::vector<double>& fractions,
                                              std::uint64_t seed) {
  if (old_ck.version == new_ck.version) {
    throw InvalidArgument("backfill needs two distinct model versions");
  }
  const OpenSetBenchmark bench = build_benchmark(data, settings);
  FeatureStore fs = benchmark_features(old_ck, data, bench, settings);
  fs.merge(benchmark_features(new_ck, data, bench, settings));
  const FeatureStore gallery_fs = fs.subset(bench.gallery_sample_ids);

  std::vector<BackfillPoint> out;
  for (double f : fractions) {
    const Gallery g = partial_backfill(gallery_fs, old_ck.version, new_ck.version,
                                       bench.gallery_identities, f, seed, settings.distance);
    const EvalReport r = search_1vN(fs, new_ck.version, g, bench.queries, settings.fpir_targets,
                                    std::vector<int>{1});
    BackfillPoint p;
    p.fraction = f;
    for (const auto& [c, proto] : g.prototypes) {
      p.backfilled_classes += proto.source_version == new_ck.version ? 1 : 0;
    }
    p.search = r.primary();
    p.rank1 = r.rank_rates.at(1);
    out.push_back(p);
  }
  return out;
}

std::string backfill_csv(const std::vector<BackfillPoint>& points) {
  std::ostringstream out;
  out << "fraction,backfilled_classes,tpir,rank1\n";
  // Fractions are short grid values; rates keep full precision so they can
  // be compared exactly against other reports.
  for (const auto& p : points) {
    out << std::setprecision(6) << p.fraction << ',' << p.backfilled_classes << ','
        << std::setprecision(17) << p.search << ',' << p.rank1 << '\n';
  }
  return out.str();
}

std::vector<double> backfill_fractions(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw InvalidArgument("backfill step must lie in (0, 1]");
  const auto n = static_cast<int>(std::llround(1.0 / step));
  if (std::abs(n * step - 1.0) > 1e-9) throw InvalidArgument("backfill step must divide 1");
  std::vector<double> out;
  for (int i = 0; i <= n; ++i) out.push_back(static_cast<double>(i) / n);
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw InvalidArgument("spearman needs two equally long series of length >= 2");
  }
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace bct
