#include "bct/feature_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "bct/errors.hpp"

namespace bct {

void FeatureStore::add(FeatureRecord record) {
  if (record.embedding.empty()) throw DimensionError("feature record with empty embedding");
  for (float v : record.embedding) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite embedding for " + record.sample_id);
  }
  auto key = std::make_pair(record.sample_id, record.model_version);
  if (index_.count(key)) {
    throw InvalidArgument("duplicate record for sample '" + record.sample_id + "' version '" +
                          record.model_version + "'");
  }
  auto [it, inserted] = dims_.emplace(record.model_version, record.embedding.size());
  if (!inserted && it->second != record.embedding.size()) {
    throw DimensionError("version '" + record.model_version + "' has dim " +
                         std::to_string(it->second) + ", record has " +
                         std::to_string(record.embedding.size()));
  }
  index_.emplace(std::move(key), records_.size());
  records_.push_back(std::move(record));
}

void FeatureStore::merge(const FeatureStore& other) {
  for (const auto& r : other.records_) add(r);
}

std::optional<std::size_t> FeatureStore::dim_of(const std::string& version) const {
  auto it = dims_.find(version);
  if (it == dims_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> FeatureStore::versions() const {
  std::vector<std::string> out;
  for (const auto& [v, d] : dims_) out.push_back(v);
  return out;
}

const FeatureRecord* FeatureStore::find(const std::string& sample_id,
                                        const std::string& version) const {
  auto it = index_.find({sample_id, version});
  return it == index_.end() ? nullptr : &records_[it->second];
}

const FeatureRecord& FeatureStore::at(const std::string& sample_id,
                                      const std::string& version) const {
  const FeatureRecord* r = find(sample_id, version);
  if (!r) {
    throw InvalidArgument("no feature for sample '" + sample_id + "' under version '" + version +
                          "'");
  }
  return *r;
}

FeatureStore FeatureStore::subset(const std::set<std::string>& sample_ids) const {
  FeatureStore out;
  for (const auto& r : records_) {
    if (sample_ids.count(r.sample_id)) out.add(r);
  }
  return out;
}

FeatureStore FeatureStore::only_version(const std::string& version) const {
  FeatureStore out;
  for (const auto& r : records_) {
    if (r.model_version == version) out.add(r);
  }
  return out;
}

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(u & 0xFFu));
    u = static_cast<U>(u >> 8);
  }
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  if (s.size() > 0xFFFF) throw FormatError("string longer than 65535 bytes: " + s.substr(0, 32));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u = static_cast<U>(u | (static_cast<U>(bytes_[pos_ + i]) << (8 * i)));
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  std::string get_string() {
    const auto n = get_le<std::uint16_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void expect_magic() {
    need(4);
    if (std::memcmp(bytes_.data(), "BCTF", 4) != 0) throw FormatError("bad feature-store magic");
    pos_ += 4;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("truncated feature-store file");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_feature_store(const FeatureStore& store) {
  std::size_t dim = 0;
  for (const auto& r : store.records()) {
    if (dim == 0) dim = r.embedding.size();
    if (r.embedding.size() != dim) {
      throw DimensionError("a feature-store file holds a single embedding dim");
    }
  }
  std::vector<std::uint8_t> out{'B', 'C', 'T', 'F'};
  put_le<std::uint32_t>(out, kFeatureFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  put_le<std::uint64_t>(out, store.size());
  for (const auto& r : store.records()) {
    put_string(out, r.sample_id);
    put_le<std::int64_t>(out, r.class_id);
    put_string(out, r.model_version);
    for (float v : r.embedding) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

FeatureStore decode_feature_store(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  in.expect_magic();
  const auto format = in.get_le<std::uint32_t>();
  if (format != kFeatureFormatVersion) {
    throw FormatError("unsupported feature-store format version " + std::to_string(format));
  }
  const auto dim = in.get_le<std::uint32_t>();
  const auto count = in.get_le<std::uint64_t>();
  if (count > 0 && dim == 0) throw FormatError("feature-store records with zero dim");
  FeatureStore store;
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureRecord r;
    r.sample_id = in.get_string();
    r.class_id = in.get_le<std::int64_t>();
    r.model_version = in.get_string();
    r.embedding.resize(dim);
    for (auto& v : r.embedding) v = std::bit_cast<float>(in.get_le<std::uint32_t>());
    store.add(std::move(r));
  }
  if (!in.at_end()) throw FormatError("trailing bytes after feature-store records");
  return store;
}

void write_feature_store(const FeatureStore& store, const std::filesystem::path& path) {
  const auto bytes = encode_feature_store(store);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

FeatureStore read_feature_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_feature_store(bytes);
}

}  // namespace bct
