#include "bct/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "json.hpp"

#include "bct/errors.hpp"

namespace bct {

using nlohmann::json;

void SyntheticSpec::validate() const {
  if (num_train_identities < 1 || num_openset_identities < 1 || samples_per_identity < 1 ||
      input_dim < 1) {
    throw InvalidArgument("synthetic spec counts must all be >= 1");
  }
  if (!(class_separation >= 0.0) || !std::isfinite(class_separation)) {
    throw InvalidArgument("class_separation must be finite and non-negative");
  }
}

std::vector<std::int64_t> Dataset::identity_subset(double fraction) const {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidArgument("identity fraction must lie in (0, 1]");
  }
  const auto n = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(train_identities.size()) - 1e-9));
  return {train_identities.begin(),
          train_identities.begin() + static_cast<std::ptrdiff_t>(std::max<std::size_t>(n, 1))};
}

std::vector<std::size_t> Dataset::samples_of(std::span<const std::int64_t> classes) const {
  const std::set<std::int64_t> wanted(classes.begin(), classes.end());
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (wanted.count(samples[i].class_id)) idx.push_back(i);
  }
  return idx;
}

DenseMatrix Dataset::inputs(std::span<const std::size_t> indices) const {
  DenseMatrix m(indices.size(), spec.input_dim);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& x = samples.at(indices[r]).input;
    std::copy(x.begin(), x.end(), m.row(r).begin());
  }
  return m;
}

std::vector<std::int64_t> Dataset::labels(std::span<const std::size_t> indices) const {
  std::vector<std::int64_t> y;
  y.reserve(indices.size());
  for (std::size_t i : indices) y.push_back(samples.at(i).class_id);
  return y;
}

void Dataset::validate() const {
  spec.validate();
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.sample_id).second) {
      throw FormatError("duplicate sample id '" + s.sample_id + "'");
    }
    if (s.input.size() != spec.input_dim) {
      throw FormatError("sample '" + s.sample_id + "' has wrong input dim");
    }
    for (double v : s.input) {
      if (!std::isfinite(v)) throw FormatError("sample '" + s.sample_id + "' is not finite");
    }
  }
  std::set<std::int64_t> train(train_identities.begin(), train_identities.end());
  if (train.size() != spec.num_train_identities ||
      openset_identities.size() != spec.num_openset_identities) {
    throw FormatError("identity lists disagree with the dataset spec");
  }
  for (std::int64_t id : openset_identities) {
    if (train.count(id)) {
      throw FormatError("identity " + std::to_string(id) + " is both train and open-set");
    }
  }
}

Dataset generate(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t d = spec.input_dim;
  const std::size_t n_classes = spec.num_train_identities + spec.num_openset_identities;
  std::mt19937_64 rng(spec.rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Frozen nonlinearity x = tanh(A u + c).
  DenseMatrix a(d, d);
  const double a_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& v : a.data()) v = a_std * normal(rng);
  std::vector<double> c(d);
  for (double& v : c) v = 0.5 * normal(rng);

  // Class centers uniform on the sphere of radius class_separation.
  std::vector<std::vector<double>> centers(n_classes, std::vector<double>(d));
  for (auto& center : centers) {
    double norm = 0.0;
    do {
      for (double& v : center) v = normal(rng);
      norm = l2_norm(center);
    } while (norm < 1e-12);
    for (double& v : center) v *= spec.class_separation / norm;
  }

  Dataset data;
  data.spec = spec;
  data.samples.reserve(n_classes * spec.samples_per_identity);
  std::vector<double> u(d);
  for (std::size_t k = 0; k < n_classes; ++k) {
    for (std::size_t s = 0; s < spec.samples_per_identity; ++s) {
      for (std::size_t i = 0; i < d; ++i) u[i] = centers[k][i] + normal(rng);
      LabeledSample sample;
      sample.sample_id = "c" + std::to_string(k) + "_s" + std::to_string(s);
      sample.class_id = static_cast<std::int64_t>(k);
      sample.input.resize(d);
      for (std::size_t i = 0; i < d; ++i) {
        double acc = c[i];
        for (std::size_t j = 0; j < d; ++j) acc += a(i, j) * u[j];
        sample.input[i] = std::tanh(acc);
      }
      data.samples.push_back(std::move(sample));
    }
  }

  for (std::size_t k = 0; k < spec.num_train_identities; ++k) {
    data.train_identities.push_back(static_cast<std::int64_t>(k));
  }
  std::shuffle(data.train_identities.begin(), data.train_identities.end(), rng);
  for (std::size_t k = spec.num_train_identities; k < n_classes; ++k) {
    data.openset_identities.push_back(static_cast<std::int64_t>(k));
  }
  return data;
}

QueryGallerySplit split_queries_galleries(const Dataset& data,
                                          std::span<const std::int64_t> classes,
                                          std::size_t per_class_gallery,
                                          std::size_t per_class_query, std::uint64_t seed) {
  std::map<std::int64_t, std::vector<std::size_t>> by_class;
  for (std::int64_t c : classes) by_class[c];
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    auto it = by_class.find(data.samples[i].class_id);
    if (it != by_class.end()) it->second.push_back(i);
  }
  QueryGallerySplit split;
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < per_class_gallery + per_class_query) {
      throw InvalidArgument("class " + std::to_string(cls) + " has " +
                            std::to_string(idx.size()) + " samples, fewer than the " +
                            std::to_string(per_class_gallery + per_class_query) + " requested");
    }
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(cls + 1)));
    std::shuffle(idx.begin(), idx.end(), rng);
    split.gallery.insert(split.gallery.end(), idx.begin(),
                         idx.begin() + static_cast<std::ptrdiff_t>(per_class_gallery));
    split.query.insert(split.query.end(),
                       idx.begin() + static_cast<std::ptrdiff_t>(per_class_gallery),
                       idx.begin() + static_cast<std::ptrdiff_t>(per_class_gallery + per_class_query));
  }
  return split;
}

std::filesystem::path dataset_sidecar_path(const std::filesystem::path& jsonl) {
  auto p = jsonl;
  p.replace_extension(".spec.json");
  return p;
}

void save_dataset(const Dataset& data, const std::filesystem::path& jsonl,
                  const std::filesystem::path& spec_json) {
  std::ofstream out(jsonl, std::ios::binary);
  if (!out) throw IoError("cannot write " + jsonl.string());
  for (const auto& s : data.samples) {
    json j = {{"sample_id", s.sample_id}, {"class_id", s.class_id}, {"input", s.input}};
    out << j.dump() << '\n';
  }
  const auto& sp = data.spec;
  json meta = {
      {"num_train_identities", sp.num_train_identities},
      {"num_openset_identities", sp.num_openset_identities},
      {"samples_per_identity", sp.samples_per_identity},
      {"input_dim", sp.input_dim},
      {"class_separation", sp.class_separation},
      {"rng_seed", sp.rng_seed},
      {"train_identities", data.train_identities},
      {"openset_identities", data.openset_identities},
  };
  std::ofstream side(spec_json, std::ios::binary);
  if (!side) throw IoError("cannot write " + spec_json.string());
  side << meta.dump(2) << '\n';
  if (!out || !side) throw IoError("short write while saving dataset");
}

Dataset load_dataset(const std::filesystem::path& jsonl, const std::filesystem::path& spec_json) {
  Dataset data;
  try {
    std::ifstream side(spec_json);
    if (!side) throw IoError("cannot read " + spec_json.string());
    const json meta = json::parse(side);
    auto& sp = data.spec;
    sp.num_train_identities = meta.at("num_train_identities").get<std::size_t>();
    sp.num_openset_identities = meta.at("num_openset_identities").get<std::size_t>();
    sp.samples_per_identity = meta.at("samples_per_identity").get<std::size_t>();
    sp.input_dim = meta.at("input_dim").get<std::size_t>();
    sp.class_separation = meta.at("class_separation").get<double>();
    sp.rng_seed = meta.at("rng_seed").get<std::uint64_t>();
    data.train_identities = meta.at("train_identities").get<std::vector<std::int64_t>>();
    data.openset_identities = meta.at("openset_identities").get<std::vector<std::int64_t>>();

    std::ifstream in(jsonl);
    if (!in) throw IoError("cannot read " + jsonl.string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      LabeledSample s;
      s.sample_id = j.at("sample_id").get<std::string>();
      s.class_id = j.at("class_id").get<std::int64_t>();
      s.input = j.at("input").get<std::vector<double>>();
      data.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed dataset file: ") + e.what());
  }
  data.validate();
  return data;
}

}  // namespace bct
