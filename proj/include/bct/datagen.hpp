#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bct/matrix.hpp"

namespace bct {

// Synthetic open-set identity benchmark. Identities [0, num_train) are the
// embedding-training classes; [num_train, num_train + num_openset) are held
// out for galleries and queries.
struct SyntheticSpec {
  std::size_t num_train_identities = 60;
  std::size_t num_openset_identities = 40;
  std::size_t samples_per_identity = 50;
  std::size_t input_dim = 32;
  double class_separation = 8.0;
  std::uint64_t rng_seed = 7;

  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

struct LabeledSample {
  std::string sample_id;
  std::int64_t class_id = 0;
  std::vector<double> input;
  bool operator==(const LabeledSample&) const = default;
};

struct Dataset {
  SyntheticSpec spec;
  std::vector<LabeledSample> samples;
  // Train identities in nesting order: a fraction f of the identities is
  // the first ceil(f * N) entries, so smaller subsets nest in larger ones.
  std::vector<std::int64_t> train_identities;
  std::vector<std::int64_t> openset_identities;

  std::vector<std::int64_t> identity_subset(double fraction) const;
  // Indices of samples whose class is in `classes`, in dataset order.
  std::vector<std::size_t> samples_of(std::span<const std::int64_t> classes) const;
  DenseMatrix inputs(std::span<const std::size_t> indices) const;
  std::vector<std::int64_t> labels(std::span<const std::size_t> indices) const;
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

Dataset generate(const SyntheticSpec& spec);

// Disjoint per-class gallery/query sample sets (indices into the dataset).
struct QueryGallerySplit {
  std::vector<std::size_t> gallery;
  std::vector<std::size_t> query;
};

QueryGallerySplit split_queries_galleries(const Dataset& data,
                                          std::span<const std::int64_t> classes,
                                          std::size_t per_class_gallery,
                                          std::size_t per_class_query, std::uint64_t seed);

// dataset.jsonl holds one LabeledSample per line; the sidecar holds the
// spec and identity lists.
void save_dataset(const Dataset& data, const std::filesystem::path& jsonl,
                  const std::filesystem::path& spec_json);
Dataset load_dataset(const std::filesystem::path& jsonl, const std::filesystem::path& spec_json);

// "<stem>.jsonl" -> "<stem>.spec.json"
std::filesystem::path dataset_sidecar_path(const std::filesystem::path& jsonl);

}  // namespace bct
