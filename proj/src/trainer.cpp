#include "bct/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>

#include "bct/errors.hpp"

namespace bct {

namespace {

constexpr std::uint64_t kHeadSeedSalt = 0x68656164ULL;     // "head"
constexpr std::uint64_t kShuffleSeedSalt = 0x73687566ULL;  // "shuf"

struct Row {
  std::size_t sample = 0;
  bool pseudo = false;  // LwF: unlabeled for the new model, soft-labeled by the old one
};

// Everything the compatibility term needs, prepared once before training.
struct CompatContext {
  BctMode mode = BctMode::None;
  InfluenceSet t_bct = InfluenceSet::Old;
  const Checkpoint* old = nullptr;
  ClassifierHead influence_head;
  std::set<std::int64_t> old_classes;
  std::map<std::size_t, std::size_t> old_feature_row;  // sample -> row of old_features
  DenseMatrix old_features;
  std::map<std::size_t, std::size_t> soft_label_row;   // sample -> row of soft_labels
  DenseMatrix soft_labels;                             // in the new head's columns
  double temperature = 1.0;
};

struct BatchResult {
  double classification_loss = 0.0;
  double compatibility_loss = 0.0;
  std::size_t correct = 0;
  std::size_t labeled = 0;
};

void scatter_rows(DenseMatrix& dst, const DenseMatrix& src, std::span<const std::size_t> rows,
                  double scale) {
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto d = dst.row(rows[r]);
    auto s = src.row(r);
    for (std::size_t c = 0; c < s.size(); ++c) d[c] += scale * s[c];
  }
}

void apply_head_sgd(ClassifierHead& head, const DenseMatrix& grad_w, const DenseMatrix& grad_b,
                    const SgdConfig& sgd, int epoch) {
  sgd_step(head.weights.data(), grad_w.data(), sgd, epoch);
  if (!head.bias.empty()) sgd_step(head.bias.data(), grad_b.data(), sgd, epoch);
}

CompatContext prepare_compat(const TrainRecipe& recipe, const Dataset& data,
                             const std::vector<Row>& rows, const Checkpoint* old,
                             const ClassifierHead& new_head) {
  CompatContext ctx;
  ctx.mode = recipe.bct_mode;
  ctx.t_bct = recipe.t_bct;
  ctx.old = old;
  if (recipe.bct_mode == BctMode::None) return ctx;
  if (!old) throw InvalidArgument("bct_mode " + to_string(recipe.bct_mode) +
                                  " requires an old checkpoint");
  ctx.old_classes.insert(old->head.class_ids.begin(), old->head.class_ids.end());

  const std::size_t k_new = recipe.embed_dim, k_old = old->model.embed_dim();
  if (recipe.bct_mode == BctMode::L2Feature && k_new != k_old) {
    throw DimensionError("l2 feature regularizer needs equal embedding dims");
  }
  if (recipe.bct_mode == BctMode::Influence && k_new < k_old) {
    throw DimensionError("new embedding dim is narrower than the old classifier");
  }

  if (recipe.bct_mode == BctMode::LwF) {
    std::vector<std::size_t> pseudo;
    for (const auto& r : rows) {
      if (r.pseudo) pseudo.push_back(r.sample);
    }
    const DenseMatrix probs =
        pseudo.empty() ? DenseMatrix(0, old->head.num_classes())
                       : lwf_soft_labels(old->model, old->head, data.inputs(pseudo));
    const auto cols = resolve_columns(new_head, old->head.class_ids);
    ctx.soft_labels = DenseMatrix(pseudo.size(), new_head.num_classes());
    for (std::size_t i = 0; i < pseudo.size(); ++i) {
      ctx.soft_label_row[pseudo[i]] = i;
      for (std::size_t j = 0; j < cols.size(); ++j) ctx.soft_labels(i, cols[j]) = probs(i, j);
    }
    return ctx;
  }

  // Old-model features of every training sample, computed once.
  std::vector<std::size_t> samples;
  for (const auto& r : rows) samples.push_back(r.sample);
  ctx.old_features = old->model.forward(data.inputs(samples));
  for (std::size_t i = 0; i < samples.size(); ++i) ctx.old_feature_row[samples[i]] = i;

  ctx.influence_head = old->head;
  if (recipe.bct_mode == BctMode::Influence && recipe.t_bct == InfluenceSet::NewSynth) {
    std::map<std::int64_t, std::vector<std::size_t>> by_class;
    for (std::size_t s : samples) {
      const auto c = data.samples[s].class_id;
      if (!ctx.old_classes.count(c)) by_class[c].push_back(s);
    }
    std::map<std::int64_t, DenseMatrix> new_class_samples;
    for (const auto& [c, idx] : by_class) new_class_samples.emplace(c, data.inputs(idx));
    ctx.influence_head = extend_with_synthesized(old->head, old->model, new_class_samples);
  }
  ctx.temperature = recipe.kd_temperature.value_or(
      old->head.normalizes() ? old->head.spec.scale : 1.0);
  return ctx;
}

// Adds lambda * d(compat)/dZ into grad_z (and the new head gradient for LwF);
// returns the unweighted compatibility loss.
double compat_term(const CompatContext& ctx, const Dataset& data, std::span<const Row> batch,
                   const DenseMatrix& z, const ClassifierHead& new_head, double lambda,
                   DenseMatrix& grad_z, DenseMatrix& head_grad_w, DenseMatrix& head_grad_b) {
  if (ctx.mode == BctMode::None) return 0.0;
  const bool apply = lambda != 0.0;

  if (ctx.mode == BctMode::LwF) {
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch[i].pseudo) pos.push_back(i);
    }
    if (pos.empty()) return 0.0;
    std::vector<std::size_t> srows;
    for (std::size_t p : pos) srows.push_back(ctx.soft_label_row.at(batch[p].sample));
    const DenseMatrix zp = gather_rows(z, pos);
    const LossValue lv = soft_cross_entropy(head_logits(new_head, zp),
                                            gather_rows(ctx.soft_labels, srows));
    if (apply) {
      const HeadGrads hg = head_backward(new_head, zp, lv.grad);
      scatter_rows(grad_z, hg.grad_embeddings, pos, lambda);
      add_inplace(head_grad_w, hg.grad_weights, lambda);
      if (!head_grad_b.empty()) add_inplace(head_grad_b, hg.grad_bias, lambda);
    }
    return lv.loss;
  }

  // Rows whose class the old classifier knows, and the rest.
  std::vector<std::size_t> known, unknown;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto c = data.samples[batch[i].sample].class_id;
    (ctx.old_classes.count(c) ? known : unknown).push_back(i);
  }
  auto old_rows = [&](std::span<const std::size_t> pos) {
    std::vector<std::size_t> r;
    for (std::size_t p : pos) r.push_back(ctx.old_feature_row.at(batch[p].sample));
    return gather_rows(ctx.old_features, r);
  };
  auto class_ids = [&](std::span<const std::size_t> pos) {
    std::vector<std::int64_t> y;
    for (std::size_t p : pos) y.push_back(data.samples[batch[p].sample].class_id);
    return y;
  };

  double loss = 0.0;
  if (ctx.mode == BctMode::L2Feature) {
    if (known.empty()) return 0.0;
    const LossValue lv = l2_feature_regularizer(gather_rows(z, known), old_rows(known));
    if (apply) scatter_rows(grad_z, lv.grad, known, lambda);
    return lv.loss;
  }

  // Influence loss.
  std::vector<std::size_t> ce_rows = known;
  if (ctx.t_bct == InfluenceSet::NewSynth) {
    ce_rows.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) ce_rows[i] = i;
  }
  const double n_total = static_cast<double>(
      ce_rows.size() + (ctx.t_bct == InfluenceSet::NewKD ? unknown.size() : 0));
  if (!ce_rows.empty()) {
    const auto y = class_ids(ce_rows);
    const LossValue lv = influence_loss(gather_rows(z, ce_rows), ctx.influence_head, y);
    // Each sub-loss is a batch mean; reweight so the total is a mean over
    // every row that received a compatibility term.
    const double w = static_cast<double>(ce_rows.size()) / n_total;
    loss += w * lv.loss;
    if (apply) scatter_rows(grad_z, lv.grad, ce_rows, lambda * w);
  }
  if (ctx.t_bct == InfluenceSet::NewKD && !unknown.empty()) {
    const LossValue lv = kd_influence_loss(gather_rows(z, unknown), old_rows(unknown),
                                           ctx.influence_head, ctx.temperature);
    const double w = static_cast<double>(unknown.size()) / n_total;
    loss += w * lv.loss;
    if (apply) scatter_rows(grad_z, lv.grad, unknown, lambda * w);
  }
  return loss;
}

Checkpoint run_training(const TrainRecipe& recipe, const Dataset& data, const Checkpoint* old) {
  recipe.validate();
  if (recipe.bct_mode != BctMode::None && !old) {
    throw InvalidArgument("bct_mode " + to_string(recipe.bct_mode) +
                          " requires an old checkpoint");
  }
  const auto classes = data.identity_subset(recipe.data_fraction);
  if (classes.size() < 2) throw InvalidArgument("training needs at least two classes");

  const std::uint64_t seed = recipe.sgd.rng_seed;
  Checkpoint ck;
  ck.version = recipe.version;
  ck.recipe = recipe;
  if (old) ck.recipe.old_version = old->version;
  ck.model = EmbeddingModel(data.spec.input_dim, recipe.layers(data.spec.input_dim), seed);
  ck.head = ClassifierHead::init(recipe.head, recipe.embed_dim, classes, seed ^ kHeadSeedSalt);

  std::vector<Row> rows;
  for (std::size_t i : data.samples_of(classes)) rows.push_back({i, false});
  if (recipe.bct_mode == BctMode::LwF) {
    const std::set<std::int64_t> labeled(classes.begin(), classes.end());
    std::vector<std::int64_t> rest;
    for (std::int64_t c : data.train_identities) {
      if (!labeled.count(c)) rest.push_back(c);
    }
    for (std::size_t i : data.samples_of(rest)) rows.push_back({i, true});
  }
  const CompatContext ctx = prepare_compat(recipe, data, rows, old, ck.head);

  std::mt19937_64 rng(seed ^ kShuffleSeedSalt);
  const std::size_t bs = recipe.sgd.batch_size;
  double initial_loss = 0.0;
  int blowup_epochs = 0;

  for (int epoch = 0; epoch < recipe.sgd.epochs; ++epoch) {
    std::shuffle(rows.begin(), rows.end(), rng);
    double cls_sum = 0.0, compat_sum = 0.0;
    std::size_t batches = 0, correct = 0, labeled_total = 0;

    for (std::size_t start = 0; start < rows.size(); start += bs) {
      const std::span<const Row> batch(rows.data() + start, std::min(bs, rows.size() - start));
      std::vector<std::size_t> idx;
      for (const auto& r : batch) idx.push_back(r.sample);

      ForwardCache cache;
      const DenseMatrix z = ck.model.forward(data.inputs(idx), cache);
      DenseMatrix grad_z(z.rows(), z.cols());
      DenseMatrix head_grad_w(ck.head.weights.rows(), ck.head.weights.cols());
      DenseMatrix head_grad_b(ck.head.bias.rows(), ck.head.bias.cols());

      double cls_loss = 0.0;
      std::vector<std::size_t> main;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!batch[i].pseudo) main.push_back(i);
      }
      if (!main.empty()) {
        std::vector<std::int64_t> y;
        for (std::size_t p : main) y.push_back(data.samples[batch[p].sample].class_id);
        const auto cols = resolve_columns(ck.head, y);
        const DenseMatrix zm = gather_rows(z, main);
        DenseMatrix logits = head_logits(ck.head, zm, std::span<const std::size_t>(cols));
        const LossValue ce = cross_entropy(logits, cols);
        const HeadGrads hg = head_backward(ck.head, zm, ce.grad);
        scatter_rows(grad_z, hg.grad_embeddings, main, 1.0);
        add_inplace(head_grad_w, hg.grad_weights);
        if (!head_grad_b.empty()) add_inplace(head_grad_b, hg.grad_bias);
        cls_loss = ce.loss;

        if (ck.head.spec.variant == HeadVariant::CosineMargin) {
          for (std::size_t r = 0; r < cols.size(); ++r) {
            logits(r, cols[r]) += ck.head.spec.scale * ck.head.spec.margin;
          }
        }
        for (std::size_t r = 0; r < cols.size(); ++r) {
          const auto row = logits.row(r);
          const auto best = static_cast<std::size_t>(
              std::max_element(row.begin(), row.end()) - row.begin());
          correct += best == cols[r] ? 1 : 0;
        }
        labeled_total += cols.size();
      }

      const double compat_loss = compat_term(ctx, data, batch, z, ck.head, recipe.lambda,
                                             grad_z, head_grad_w, head_grad_b);
      const double total = cls_loss + recipe.lambda * compat_loss;
      if (!std::isfinite(total) || !grad_z.all_finite()) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batches),
                              epoch, static_cast<int>(batches));
      }

      const ModelGrads mg = ck.model.backward(cache, grad_z);
      ck.model.apply_sgd(mg, recipe.sgd, epoch);
      apply_head_sgd(ck.head, head_grad_w, head_grad_b, recipe.sgd, epoch);

      cls_sum += cls_loss;
      compat_sum += compat_loss;
      ++batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.classification_loss = cls_sum / static_cast<double>(batches);
    log.compatibility_loss = compat_sum / static_cast<double>(batches);
    log.train_accuracy =
        labeled_total ? static_cast<double>(correct) / static_cast<double>(labeled_total) : 0.0;
    ck.log.push_back(log);

    const double epoch_total = log.classification_loss + recipe.lambda * log.compatibility_loss;
    if (epoch == 0) initial_loss = epoch_total;
    blowup_epochs = epoch_total > 10.0 * initial_loss ? blowup_epochs + 1 : 0;
    if (blowup_epochs >= 3) {
      throw DivergenceError("loss exceeded 10x its initial value for 3 epochs (epoch " +
                                std::to_string(epoch) + ")",
                            epoch, -1);
    }
  }
  return ck;
}

}  // namespace

std::string to_string(BctMode m) {
  switch (m) {
    case BctMode::None: return "none";
    case BctMode::L2Feature: return "l2_feature";
    case BctMode::Influence: return "influence";
    case BctMode::LwF: return "lwf";
  }
  return "unknown";
}

std::string to_string(InfluenceSet s) {
  switch (s) {
    case InfluenceSet::Old: return "old";
    case InfluenceSet::NewSynth: return "new_synth";
    case InfluenceSet::NewKD: return "new_kd";
  }
  return "unknown";
}

BctMode bct_mode_from_string(const std::string& s) {
  if (s == "none") return BctMode::None;
  if (s == "l2_feature") return BctMode::L2Feature;
  if (s == "influence") return BctMode::Influence;
  if (s == "lwf") return BctMode::LwF;
  throw InvalidArgument("unknown bct_mode '" + s + "'");
}

InfluenceSet influence_set_from_string(const std::string& s) {
  if (s == "old") return InfluenceSet::Old;
  if (s == "new_synth") return InfluenceSet::NewSynth;
  if (s == "new_kd") return InfluenceSet::NewKD;
  throw InvalidArgument("unknown t_bct '" + s + "'");
}

std::vector<LayerSpec> TrainRecipe::layers(std::size_t input_dim) const {
  std::vector<LayerSpec> out;
  std::size_t dim = input_dim;
  for (std::size_t h : hidden) {
    out.push_back(AffineSpec{dim, h, true});
    out.push_back(ReluSpec{});
    dim = h;
  }
  out.push_back(AffineSpec{dim, embed_dim, true});
  if (relu_on_embedding) out.push_back(ReluSpec{});
  return out;
}

void TrainRecipe::validate() const {
  if (version.empty()) throw InvalidArgument("recipe version tag must be non-empty");
  if (embed_dim == 0) throw InvalidArgument("embed_dim must be >= 1");
  for (std::size_t h : hidden) {
    if (h == 0) throw InvalidArgument("hidden widths must be >= 1");
  }
  head.validate();
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) {
    throw InvalidArgument("data_fraction must lie in (0, 1]");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be >= 0");
  if (kd_temperature && !(*kd_temperature > 0.0)) {
    throw InvalidArgument("kd_temperature must be > 0");
  }
  sgd.validate();
}

nlohmann::json to_json(const TrainRecipe& r) {
  nlohmann::json schedule = nlohmann::json::array();
  for (const auto& s : r.sgd.learning_rate_schedule) schedule.push_back({s.epoch, s.rate});
  return {
      {"version", r.version},
      {"hidden", r.hidden},
      {"embed_dim", r.embed_dim},
      {"relu_on_embedding", r.relu_on_embedding},
      {"head",
       {{"variant", to_string(r.head.variant)},
        {"scale", r.head.scale},
        {"margin", r.head.margin}}},
      {"data_fraction", r.data_fraction},
      {"bct_mode", to_string(r.bct_mode)},
      {"t_bct", to_string(r.t_bct)},
      {"lambda", r.lambda},
      {"kd_temperature", r.kd_temperature ? nlohmann::json(*r.kd_temperature) : nlohmann::json()},
      {"sgd",
       {{"learning_rate_schedule", schedule},
        {"weight_decay", r.sgd.weight_decay},
        {"batch_size", r.sgd.batch_size},
        {"epochs", r.sgd.epochs},
        {"rng_seed", r.sgd.rng_seed}}},
      {"old_version", r.old_version},
  };
}

TrainRecipe recipe_from_json(const nlohmann::json& j) {
  TrainRecipe r;
  try {
    r.version = j.value("version", r.version);
    r.hidden = j.value("hidden", r.hidden);
    r.embed_dim = j.value("embed_dim", r.embed_dim);
    r.relu_on_embedding = j.value("relu_on_embedding", r.relu_on_embedding);
    if (j.contains("head")) {
      const auto& h = j.at("head");
      r.head.variant = head_variant_from_string(h.value("variant", to_string(r.head.variant)));
      r.head.scale = h.value("scale", r.head.scale);
      r.head.margin = h.value("margin", r.head.margin);
    }
    r.data_fraction = j.value("data_fraction", r.data_fraction);
    r.bct_mode = bct_mode_from_string(j.value("bct_mode", std::string("none")));
    r.t_bct = influence_set_from_string(j.value("t_bct", std::string("old")));
    if (r.bct_mode != BctMode::None && !j.contains("lambda")) {
      throw InvalidArgument("recipe '" + r.version + "' uses bct_mode " + to_string(r.bct_mode) +
                            " but does not state lambda");
    }
    r.lambda = j.value("lambda", r.lambda);
    if (j.contains("kd_temperature") && !j.at("kd_temperature").is_null()) {
      r.kd_temperature = j.at("kd_temperature").get<double>();
    }
    if (j.contains("sgd")) {
      const auto& s = j.at("sgd");
      if (s.contains("learning_rate_schedule")) {
        r.sgd.learning_rate_schedule.clear();
        for (const auto& e : s.at("learning_rate_schedule")) {
          r.sgd.learning_rate_schedule.push_back({e.at(0).get<int>(), e.at(1).get<double>()});
        }
      }
      r.sgd.weight_decay = s.value("weight_decay", r.sgd.weight_decay);
      r.sgd.batch_size = s.value("batch_size", r.sgd.batch_size);
      r.sgd.epochs = s.value("epochs", r.sgd.epochs);
      r.sgd.rng_seed = s.value("rng_seed", r.sgd.rng_seed);
    }
    r.old_version = j.value("old_version", r.old_version);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed recipe: ") + e.what());
  }
  r.validate();
  return r;
}

Checkpoint train(const TrainRecipe& recipe, const Dataset& data) {
  return run_training(recipe, data, nullptr);
}

Checkpoint train(const TrainRecipe& recipe, const Dataset& data, const Checkpoint& old) {
  return run_training(recipe, data, &old);
}

std::vector<Checkpoint> train_chain(const std::array<TrainRecipe, 3>& recipes,
                                    const Dataset& data) {
  if (recipes[0].bct_mode != BctMode::None) {
    throw InvalidArgument("the first model of a chain has no predecessor");
  }
  std::vector<Checkpoint> out;
  out.push_back(train(recipes[0], data));
  for (std::size_t i = 1; i < 3; ++i) {
    // Each link sees exactly one old checkpoint: its immediate predecessor.
    out.push_back(recipes[i].bct_mode == BctMode::None ? train(recipes[i], data)
                                                       : train(recipes[i], data, out[i - 1]));
  }
  return out;
}

FeatureStore extract_features(const Checkpoint& checkpoint, const Dataset& data,
                              std::span<const std::size_t> indices, bool normalize) {
  FeatureStore store;
  if (indices.empty()) return store;
  DenseMatrix z = checkpoint.model.forward(data.inputs(indices));
  if (normalize) z = l2norm_forward(z);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& s = data.samples[indices[r]];
    FeatureRecord rec;
    rec.sample_id = s.sample_id;
    rec.class_id = s.class_id;
    rec.model_version = checkpoint.version;
    rec.embedding.assign(z.row(r).begin(), z.row(r).end());
    store.add(std::move(rec));
  }
  return store;
}

// ---------------------------------------------------------------------------
// Checkpoint files

namespace {

void put_f64(std::vector<std::uint8_t>& out, double v) {
  auto u = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>(u & 0xFFu));
    u >>= 8;
  }
}

double get_f64(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw FormatError("checkpoint blob is truncated");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += 8;
  return std::bit_cast<double>(u);
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

std::vector<std::uint8_t> checkpoint_blob(const Checkpoint& ck) {
  std::vector<std::uint8_t> out;
  for (const auto& p : ck.model.params()) {
    for (double v : p.weights.data()) put_f64(out, v);
    if (p.bias) {
      for (double v : p.bias->data()) put_f64(out, v);
    }
  }
  for (double v : ck.head.weights.data()) put_f64(out, v);
  for (double v : ck.head.bias.data()) put_f64(out, v);
  return out;
}

nlohmann::json checkpoint_manifest(const Checkpoint& ck) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : ck.model.layers()) {
    if (const auto* a = std::get_if<AffineSpec>(&l)) {
      layers.push_back({{"kind", "affine"}, {"in", a->in_dim}, {"out", a->out_dim},
                        {"bias", a->has_bias}});
    } else if (std::holds_alternative<ReluSpec>(l)) {
      layers.push_back({{"kind", "relu"}});
    } else {
      layers.push_back({{"kind", "l2_normalize"}});
    }
  }
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : ck.log) {
    log.push_back({{"epoch", e.epoch},
                   {"classification_loss", e.classification_loss},
                   {"compatibility_loss", e.compatibility_loss},
                   {"train_accuracy", e.train_accuracy}});
  }
  return {
      {"format", "bct-checkpoint"},
      {"format_version", 1},
      {"version", ck.version},
      {"recipe", to_json(ck.recipe)},
      {"input_dim", ck.model.input_dim()},
      {"layers", layers},
      {"head",
       {{"variant", to_string(ck.head.spec.variant)},
        {"scale", ck.head.spec.scale},
        {"margin", ck.head.spec.margin},
        {"embed_dim", ck.head.embed_dim()},
        {"num_classes", ck.head.num_classes()},
        {"class_ids", ck.head.class_ids}}},
      {"blob", {{"dtype", "f64le"}, {"count", checkpoint_blob(ck).size() / 8}}},
      {"log", log},
  };
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& stem) {
  const auto blob = checkpoint_blob(ck);
  std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) throw IoError("cannot write " + with_suffix(stem, ".bin").string());
  bin.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  std::ofstream man(with_suffix(stem, ".json"), std::ios::binary);
  if (!man) throw IoError("cannot write " + with_suffix(stem, ".json").string());
  man << checkpoint_manifest(ck).dump(2) << '\n';
  if (!bin || !man) throw IoError("short write while saving checkpoint " + stem.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  std::ifstream man(with_suffix(stem, ".json"));
  if (!man) throw IoError("cannot read " + with_suffix(stem, ".json").string());
  std::ifstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) throw IoError("cannot read " + with_suffix(stem, ".bin").string());
  const std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bin)),
                                       std::istreambuf_iterator<char>());
  Checkpoint ck;
  try {
    const auto j = nlohmann::json::parse(man);
    if (j.at("format").get<std::string>() != "bct-checkpoint" ||
        j.at("format_version").get<int>() != 1) {
      throw FormatError("not a version-1 checkpoint manifest");
    }
    ck.version = j.at("version").get<std::string>();
    ck.recipe = recipe_from_json(j.at("recipe"));
    const auto input_dim = j.at("input_dim").get<std::size_t>();
    std::vector<LayerSpec> layers;
    for (const auto& l : j.at("layers")) {
      const auto kind = l.at("kind").get<std::string>();
      if (kind == "affine") {
        layers.push_back(AffineSpec{l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>(),
                                    l.at("bias").get<bool>()});
      } else if (kind == "relu") {
        layers.push_back(ReluSpec{});
      } else if (kind == "l2_normalize") {
        layers.push_back(L2NormalizeSpec{});
      } else {
        throw FormatError("unknown layer kind '" + kind + "'");
      }
    }
    std::size_t pos = 0;
    std::vector<AffineParams> params;
    for (const auto& l : layers) {
      const auto* a = std::get_if<AffineSpec>(&l);
      if (!a) continue;
      AffineParams p;
      p.weights = DenseMatrix(a->in_dim, a->out_dim);
      for (double& v : p.weights.data()) v = get_f64(blob, pos);
      if (a->has_bias) {
        p.bias = DenseMatrix(1, a->out_dim);
        for (double& v : p.bias->data()) v = get_f64(blob, pos);
      }
      params.push_back(std::move(p));
    }
    ck.model = EmbeddingModel(input_dim, std::move(layers), std::move(params));

    const auto& h = j.at("head");
    ck.head.spec.variant = head_variant_from_string(h.at("variant").get<std::string>());
    ck.head.spec.scale = h.at("scale").get<double>();
    ck.head.spec.margin = h.at("margin").get<double>();
    ck.head.class_ids = h.at("class_ids").get<std::vector<std::int64_t>>();
    ck.head.weights = DenseMatrix(h.at("embed_dim").get<std::size_t>(),
                                  h.at("num_classes").get<std::size_t>());
    for (double& v : ck.head.weights.data()) v = get_f64(blob, pos);
    if (ck.head.spec.variant == HeadVariant::Softmax) {
      ck.head.bias = DenseMatrix(1, ck.head.weights.cols());
      for (double& v : ck.head.bias.data()) v = get_f64(blob, pos);
    }
    if (pos != blob.size()) throw FormatError("checkpoint blob has trailing bytes");
    ck.head.validate();

    for (const auto& e : j.at("log")) {
      ck.log.push_back({e.at("epoch").get<int>(), e.at("classification_loss").get<double>(),
                        e.at("compatibility_loss").get<double>(),
                        e.at("train_accuracy").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  return ck;
}

}  // namespace bct
