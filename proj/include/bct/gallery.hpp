#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bct/feature_store.hpp"

namespace bct {

enum class Distance { Cosine, Euclidean };

std::string to_string(Distance d);
Distance distance_from_string(const std::string& s);

// Cosine: 1 - cos(a, b). Euclidean: ||a - b||. Operands must have equal
// length; callers apply truncate_for_comparison first when they do not.
double distance(Distance d, std::span<const double> a, std::span<const double> b);

// Similarity used for thresholding: 1 - distance for cosine, -distance for
// Euclidean, so larger is always more similar.
double similarity(Distance d, std::span<const double> a, std::span<const double> b);

// First `target_dim` coordinates, re-normalized under cosine distance.
std::vector<double> truncate_for_comparison(std::span<const double> embedding,
                                            std::size_t target_dim, Distance d);

// Brings a query and a reference vector to a comparable width: the query
// may be wider than the reference (it is truncated), never narrower.
double compare(Distance d, std::span<const double> query, std::span<const double> reference);

struct Prototype {
  std::vector<double> vector;
  std::string source_version;
  bool operator==(const Prototype&) const = default;
};

// Class prototypes phi_i = S({phi(x) : y(x) = i}) with S = mean. Prototypes
// are stored L2-normalized under cosine distance.
struct Gallery {
  Distance distance = Distance::Cosine;
  std::map<std::int64_t, Prototype> prototypes;
  bool operator==(const Gallery&) const = default;
};

std::vector<double> to_double(std::span<const float> v);

// Prototypes of `class_ids` from every record of `version` in `store`.
// Throws if a class has no records (the message lists them all) or, under
// cosine distance, if a class mean is zero.
Gallery build_prototypes(const FeatureStore& store, const std::string& version,
                         std::span<const std::int64_t> class_ids, Distance d = Distance::Cosine);

struct Assignment {
  std::int64_t class_id = 0;
  double distance = 0.0;
};

// Nearest prototype; ties go to the smallest class id.
Assignment assign(const Gallery& gallery, std::span<const double> query);

// All prototypes ordered by (distance, class id).
std::vector<Assignment> rank_classes(const Gallery& gallery, std::span<const double> query);

// Class-granular backfill: a seeded random ceil(fraction * N) subset of the
// classes takes prototypes from `new_version`, the rest from `old_version`.
// The same seed yields nested subsets as the fraction grows.
Gallery partial_backfill(const FeatureStore& store, const std::string& old_version,
                         const std::string& new_version, std::span<const std::int64_t> class_ids,
                         double fraction, std::uint64_t seed, Distance d = Distance::Cosine);

void write_gallery(const Gallery& gallery, const std::filesystem::path& path);
Gallery read_gallery(const std::filesystem::path& path);

}  // namespace bct
