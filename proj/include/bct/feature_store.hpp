#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace bct {

// One extracted embedding. Embeddings are kept at on-disk precision so an
// in-memory store and its reloaded file are interchangeable.
struct FeatureRecord {
  std::string sample_id;
  std::int64_t class_id = 0;
  std::string model_version;
  std::vector<float> embedding;
  bool operator==(const FeatureRecord&) const = default;
};

// Records keyed by (sample_id, model_version); every version has one dim.
class FeatureStore {
 public:
  void add(FeatureRecord record);
  void merge(const FeatureStore& other);

  const std::vector<FeatureRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  std::optional<std::size_t> dim_of(const std::string& version) const;
  std::vector<std::string> versions() const;
  const FeatureRecord* find(const std::string& sample_id, const std::string& version) const;
  const FeatureRecord& at(const std::string& sample_id, const std::string& version) const;

  // Records (any version) whose sample id is in `sample_ids`.
  FeatureStore subset(const std::set<std::string>& sample_ids) const;
  FeatureStore only_version(const std::string& version) const;

  bool operator==(const FeatureStore& other) const { return records_ == other.records_; }

 private:
  std::vector<FeatureRecord> records_;
  std::map<std::pair<std::string, std::string>, std::size_t> index_;
  std::map<std::string, std::size_t> dims_;
};

// Binary layout, all integers little-endian:
//   "BCTF" | u32 format=1 | u32 dim | u64 count |
//   count x { u16 len, id bytes | i64 class | u16 len, version bytes | dim x f32 }
inline constexpr std::uint32_t kFeatureFormatVersion = 1;

void write_feature_store(const FeatureStore& store, const std::filesystem::path& path);
FeatureStore read_feature_store(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_feature_store(const FeatureStore& store);
FeatureStore decode_feature_store(const std::vector<std::uint8_t>& bytes);

}  // namespace bct
