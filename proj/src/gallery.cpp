#include "bct/gallery.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"

#include "bct/errors.hpp"
#include "bct/layers.hpp"
#include "bct/matrix.hpp"

namespace bct {

std::string to_string(Distance d) { return d == Distance::Cosine ? "cosine" : "euclidean"; }

Distance distance_from_string(const std::string& s) {
  if (s == "cosine") return Distance::Cosine;
  if (s == "euclidean") return Distance::Euclidean;
  throw InvalidArgument("unknown distance '" + s + "'");
}

double distance(Distance d, std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("distance between vectors of different dims");
  if (d == Distance::Euclidean) {
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(ss);
  }
  const double na = l2_norm(a), nb = l2_norm(b);
  if (!(na > kEpsNorm) || !(nb > kEpsNorm)) {
    throw DegenerateInputError("cosine distance with a zero vector");
  }
  return 1.0 - dot(a, b) / (na * nb);
}

double similarity(Distance d, std::span<const double> a, std::span<const double> b) {
  const double dist = distance(d, a, b);
  return d == Distance::Cosine ? 1.0 - dist : -dist;
}

std::vector<double> truncate_for_comparison(std::span<const double> embedding,
                                            std::size_t target_dim, Distance d) {
  if (embedding.size() < target_dim) {
    throw DimensionError("cannot truncate a " + std::to_string(embedding.size()) +
                         "-dim embedding to " + std::to_string(target_dim) + " dims");
  }
  std::vector<double> out(embedding.begin(),
                          embedding.begin() + static_cast<std::ptrdiff_t>(target_dim));
  if (d == Distance::Cosine) {
    const double n = l2_norm(out);
    if (!(n > kEpsNorm)) throw DegenerateInputError("truncated embedding has zero norm");
    for (double& v : out) v /= n;
  }
  return out;
}

double compare(Distance d, std::span<const double> query, std::span<const double> reference) {
  if (query.size() == reference.size()) return distance(d, query, reference);
  const auto q = truncate_for_comparison(query, reference.size(), d);
  return distance(d, q, reference);
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

Gallery build_prototypes(const FeatureStore& store, const std::string& version,
                         std::span<const std::int64_t> class_ids, Distance d) {
  const auto dim = store.dim_of(version);
  std::map<std::int64_t, std::pair<std::vector<double>, std::size_t>> sums;
  for (std::int64_t c : class_ids) sums[c];
  if (dim) {
    for (const auto& r : store.records()) {
      if (r.model_version != version) continue;
      auto it = sums.find(r.class_id);
      if (it == sums.end()) continue;
      auto& [sum, n] = it->second;
      if (sum.empty()) sum.assign(*dim, 0.0);
      for (std::size_t i = 0; i < *dim; ++i) sum[i] += r.embedding[i];
      ++n;
    }
  }
  std::string missing;
  for (const auto& [c, s] : sums) {
    if (s.second == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(c);
  }
  if (!missing.empty()) {
    throw InvalidArgument("no '" + version + "' features for classes: " + missing);
  }
  Gallery g;
  g.distance = d;
  for (auto& [c, s] : sums) {
    auto& [sum, n] = s;
    for (double& v : sum) v /= static_cast<double>(n);
    if (d == Distance::Cosine) {
      const double norm = l2_norm(sum);
      if (!(norm > kEpsNorm)) {
        throw DegenerateInputError("class " + std::to_string(c) + " has a zero mean feature");
      }
      for (double& v : sum) v /= norm;
    }
    g.prototypes.emplace(c, Prototype{std::move(sum), version});
  }
  return g;
}

std::vector<Assignment> rank_classes(const Gallery& gallery, std::span<const double> query) {
  if (gallery.prototypes.empty()) throw InvalidArgument("assign against an empty gallery");
  std::vector<Assignment> out;
  out.reserve(gallery.prototypes.size());
  for (const auto& [c, p] : gallery.prototypes) {
    out.push_back({c, compare(gallery.distance, query, p.vector)});
  }
  std::stable_sort(out.begin(), out.end(), [](const Assignment& a, const Assignment& b) {
    return a.distance < b.distance;
  });
  return out;
}

Assignment assign(const Gallery& gallery, std::span<const double> query) {
  if (gallery.prototypes.empty()) throw InvalidArgument("assign against an empty gallery");
  Assignment best{0, std::numeric_limits<double>::infinity()};
  bool first = true;
  // std::map iterates in ascending class id, so strict < keeps the smallest id on ties.
  for (const auto& [c, p] : gallery.prototypes) {
    const double dist = compare(gallery.distance, query, p.vector);
    if (first || dist < best.distance) {
      best = {c, dist};
      first = false;
    }
  }
  return best;
}

Gallery partial_backfill(const FeatureStore& store, const std::string& old_version,
                         const std::string& new_version, std::span<const std::int64_t> class_ids,
                         double fraction, std::uint64_t seed, Distance d) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw InvalidArgument("backfill fraction must lie in [0, 1]");
  }
  std::vector<std::int64_t> order(class_ids.begin(), class_ids.end());
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());

  Gallery old_g = build_prototypes(store, old_version, order, d);
  Gallery new_g = build_prototypes(store, new_version, order, d);

  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_new = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(order.size()) - 1e-9));

  Gallery mixed = std::move(old_g);
  for (std::size_t i = 0; i < n_new; ++i) {
    mixed.prototypes[order[i]] = new_g.prototypes.at(order[i]);
  }
  return mixed;
}

void write_gallery(const Gallery& gallery, const std::filesystem::path& path) {
  nlohmann::json j;
  j["distance"] = to_string(gallery.distance);
  j["set_function"] = "mean";
  j["prototypes"] = nlohmann::json::array();
  for (const auto& [c, p] : gallery.prototypes) {
    j["prototypes"].push_back(
        {{"class_id", c}, {"source_version", p.source_version}, {"vector", p.vector}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

Gallery read_gallery(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    Gallery g;
    g.distance = distance_from_string(j.at("distance").get<std::string>());
    if (j.at("set_function").get<std::string>() != "mean") {
      throw FormatError("only the mean set function is supported");
    }
    for (const auto& p : j.at("prototypes")) {
      g.prototypes[p.at("class_id").get<std::int64_t>()] =
          Prototype{p.at("vector").get<std::vector<double>>(),
                    p.at("source_version").get<std::string>()};
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed gallery file: ") + e.what());
  }
}

}  // namespace bct
