#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bct/datagen.hpp"
#include "bct/feature_store.hpp"
#include "bct/gallery.hpp"
#include "bct/heads.hpp"
#include "bct/model.hpp"
#include "bct/sgd.hpp"

namespace bct {

enum class BctMode { None, L2Feature, Influence, LwF };
// Which training images the influence loss is applied to, and how classes
// unknown to the old classifier are handled.
enum class InfluenceSet { Old, NewSynth, NewKD };

std::string to_string(BctMode m);
std::string to_string(InfluenceSet s);
BctMode bct_mode_from_string(const std::string& s);
InfluenceSet influence_set_from_string(const std::string& s);

struct TrainRecipe {
  std::string version = "v1";
  // Hidden widths of the MLP; the final affine layer maps to embed_dim.
  std::vector<std::size_t> hidden{64, 64};
  std::size_t embed_dim = 16;
  bool relu_on_embedding = false;
  HeadSpec head;
  double data_fraction = 1.0;
  BctMode bct_mode = BctMode::None;
  InfluenceSet t_bct = InfluenceSet::Old;
  double lambda = 1.0;
  std::optional<double> kd_temperature;  // defaults to the old head's scale
  SgdConfig sgd;
  // Version tag of the old checkpoint the run was trained against.
  std::string old_version;

  std::vector<LayerSpec> layers(std::size_t input_dim) const;
  void validate() const;
  bool operator==(const TrainRecipe&) const = default;
};

nlohmann::json to_json(const TrainRecipe& r);
TrainRecipe recipe_from_json(const nlohmann::json& j);

struct EpochLog {
  int epoch = 0;
  double classification_loss = 0.0;
  double compatibility_loss = 0.0;
  double train_accuracy = 0.0;
  bool operator==(const EpochLog&) const = default;
};

struct Checkpoint {
  std::string version;
  TrainRecipe recipe;
  EmbeddingModel model;
  ClassifierHead head;
  std::vector<EpochLog> log;
  bool operator==(const Checkpoint&) const = default;
};

// Trains a model without a compatibility term (bct_mode must be None).
Checkpoint train(const TrainRecipe& recipe, const Dataset& data);
// Trains against a frozen old checkpoint; `old` is only read.
Checkpoint train(const TrainRecipe& recipe, const Dataset& data, const Checkpoint& old);

// r[1] is trained against the output of r[0], r[2] against the output of
// r[1]. r[0] may not carry a compatibility term.
std::vector<Checkpoint> train_chain(const std::array<TrainRecipe, 3>& recipes, const Dataset& data);

// One record per sample, tagged with the checkpoint's version; embeddings
// are L2-normalized when `normalize` is set.
FeatureStore extract_features(const Checkpoint& checkpoint, const Dataset& data,
                              std::span<const std::size_t> indices, bool normalize);

// Manifest `<stem>.json` (recipe, version, layer shapes, head, log) and
// blob `<stem>.bin` (little-endian f64 parameters in manifest order).
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& stem);
Checkpoint load_checkpoint(const std::filesystem::path& stem);
std::vector<std::uint8_t> checkpoint_blob(const Checkpoint& ck);
nlohmann::json checkpoint_manifest(const Checkpoint& ck);

}  // namespace bct
