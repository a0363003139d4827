#include "bct/heads.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bct/errors.hpp"
#include "bct/layers.hpp"

namespace bct {

namespace {

// Column-normalized copy of the head weights, with the column norms.
struct NormalizedWeights {
  DenseMatrix unit;
  std::vector<double> norms;
};

NormalizedWeights normalize_columns(const DenseMatrix& w) {
  NormalizedWeights out{w, std::vector<double>(w.cols(), 0.0)};
  for (std::size_t c = 0; c < w.cols(); ++c) {
    double ss = 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) ss += w(r, c) * w(r, c);
    const double n = std::sqrt(ss);
    if (!(n > kEpsNorm)) {
      throw DegenerateInputError("classifier column " + std::to_string(c) + " has zero norm");
    }
    out.norms[c] = n;
    for (std::size_t r = 0; r < w.rows(); ++r) out.unit(r, c) /= n;
  }
  return out;
}

void check_embed_dim(const ClassifierHead& head, const DenseMatrix& embeddings) {
  if (embeddings.cols() != head.embed_dim()) {
    throw DimensionError("head expects embedding dim " + std::to_string(head.embed_dim()) +
                         ", got " + std::to_string(embeddings.cols()));
  }
}

// Embeddings restricted to the head's width (first-K rule).
DenseMatrix fit_to_head(const DenseMatrix& embeddings, const ClassifierHead& head) {
  if (embeddings.cols() < head.embed_dim()) {
    throw DimensionError("embedding dim " + std::to_string(embeddings.cols()) +
                         " is narrower than the old head's " + std::to_string(head.embed_dim()));
  }
  if (embeddings.cols() == head.embed_dim()) return embeddings;
  return leading_columns(embeddings, head.embed_dim());
}

DenseMatrix pad_columns(const DenseMatrix& g, std::size_t cols) {
  if (g.cols() == cols) return g;
  DenseMatrix out(g.rows(), cols);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    std::copy(g.row(r).begin(), g.row(r).end(), out.row(r).begin());
  }
  return out;
}

std::vector<double> log_softmax_row(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

}  // namespace

std::string to_string(HeadVariant v) {
  switch (v) {
    case HeadVariant::Softmax: return "softmax";
    case HeadVariant::NormSoftmax: return "norm_softmax";
    case HeadVariant::CosineMargin: return "cosine_margin";
  }
  return "unknown";
}

HeadVariant head_variant_from_string(const std::string& s) {
  if (s == "softmax") return HeadVariant::Softmax;
  if (s == "norm_softmax") return HeadVariant::NormSoftmax;
  if (s == "cosine_margin") return HeadVariant::CosineMargin;
  throw InvalidArgument("unknown head variant '" + s + "'");
}

void HeadSpec::validate() const {
  if (variant == HeadVariant::Softmax) return;
  if (!(scale > 0.0)) throw InvalidArgument("head scale must be > 0");
  if (variant == HeadVariant::CosineMargin && !(margin >= 0.0 && margin < 1.0)) {
    throw InvalidArgument("cosine margin must lie in [0, 1)");
  }
}

ClassifierHead ClassifierHead::init(const HeadSpec& spec, std::size_t embed_dim,
                                    std::vector<std::int64_t> class_ids, std::uint64_t seed) {
  spec.validate();
  ClassifierHead h;
  h.spec = spec;
  h.weights = DenseMatrix(embed_dim, class_ids.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(embed_dim)));
  for (double& w : h.weights.data()) w = dist(rng);
  if (spec.variant == HeadVariant::Softmax) h.bias = DenseMatrix(1, class_ids.size());
  h.class_ids = std::move(class_ids);
  h.validate();
  return h;
}

std::optional<std::size_t> ClassifierHead::column_of(std::int64_t class_id) const {
  for (std::size_t j = 0; j < class_ids.size(); ++j) {
    if (class_ids[j] == class_id) return j;
  }
  return std::nullopt;
}

void ClassifierHead::validate() const {
  spec.validate();
  if (class_ids.size() != weights.cols()) {
    throw DimensionError("head has " + std::to_string(weights.cols()) + " columns but " +
                         std::to_string(class_ids.size()) + " class ids");
  }
  if (spec.variant == HeadVariant::Softmax) {
    if (bias.rows() != 1 || bias.cols() != weights.cols()) {
      throw DimensionError("softmax head bias must be 1xN");
    }
  } else if (!bias.empty()) {
    throw DimensionError("normalized heads carry no bias");
  }
}

DenseMatrix head_logits(const ClassifierHead& head, const DenseMatrix& embeddings,
                        std::optional<std::span<const std::size_t>> targets) {
  check_embed_dim(head, embeddings);
  if (targets && targets->size() != embeddings.rows()) {
    throw DimensionError("one target per embedding row is required");
  }
  if (!head.normalizes()) return affine_forward(embeddings, head.weights, head.bias);

  const DenseMatrix unit_e = l2norm_forward(embeddings);
  const NormalizedWeights w = normalize_columns(head.weights);
  DenseMatrix logits = matmul(unit_e, w.unit);
  const double s = head.spec.scale;
  for (double& v : logits.data()) v *= s;
  if (targets && head.spec.variant == HeadVariant::CosineMargin) {
    for (std::size_t b = 0; b < logits.rows(); ++b) {
      const std::size_t t = (*targets)[b];
      if (t >= logits.cols()) throw DimensionError("target column out of range");
      logits(b, t) -= s * head.spec.margin;
    }
  }
  return logits;
}

HeadGrads head_backward(const ClassifierHead& head, const DenseMatrix& embeddings,
                        const DenseMatrix& grad_logits) {
  check_embed_dim(head, embeddings);
  if (grad_logits.rows() != embeddings.rows() || grad_logits.cols() != head.num_classes()) {
    throw DimensionError("grad_logits shape mismatch");
  }
  HeadGrads g;
  if (!head.normalizes()) {
    AffineGrads ag = affine_backward(grad_logits, embeddings, head.weights);
    g.grad_embeddings = std::move(ag.grad_input);
    g.grad_weights = std::move(ag.grad_weights);
    g.grad_bias = std::move(ag.grad_bias);
    return g;
  }
  const DenseMatrix unit_e = l2norm_forward(embeddings);
  const NormalizedWeights w = normalize_columns(head.weights);
  DenseMatrix grad_cos = grad_logits;
  for (double& v : grad_cos.data()) v *= head.spec.scale;

  g.grad_embeddings = l2norm_backward(matmul_nt(grad_cos, w.unit), embeddings);

  const DenseMatrix grad_unit_w = matmul_tn(unit_e, grad_cos);  // [K x N]
  g.grad_weights = DenseMatrix(head.weights.rows(), head.weights.cols());
  for (std::size_t c = 0; c < head.weights.cols(); ++c) {
    double proj = 0.0;
    for (std::size_t r = 0; r < head.weights.rows(); ++r) proj += w.unit(r, c) * grad_unit_w(r, c);
    for (std::size_t r = 0; r < head.weights.rows(); ++r) {
      g.grad_weights(r, c) = (grad_unit_w(r, c) - w.unit(r, c) * proj) / w.norms[c];
    }
  }
  return g;
}

DenseMatrix softmax_rows(const DenseMatrix& logits) {
  DenseMatrix p(logits.rows(), logits.cols());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    const auto lp = log_softmax_row(logits.row(b));
    for (std::size_t j = 0; j < lp.size(); ++j) p(b, j) = std::exp(lp[j]);
  }
  return p;
}

LossValue cross_entropy(const DenseMatrix& logits, std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows()) throw DimensionError("one label per logit row required");
  if (logits.rows() == 0) throw InvalidArgument("cross_entropy on an empty batch");
  LossValue out{0.0, DenseMatrix(logits.rows(), logits.cols())};
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    if (labels[b] >= logits.cols()) {
      throw InvalidArgument("label " + std::to_string(labels[b]) + " out of range [0, " +
                            std::to_string(logits.cols()) + ")");
    }
    const auto lp = log_softmax_row(logits.row(b));
    out.loss -= lp[labels[b]] * inv_b;
    for (std::size_t j = 0; j < lp.size(); ++j) out.grad(b, j) = std::exp(lp[j]) * inv_b;
    out.grad(b, labels[b]) -= inv_b;
  }
  return out;
}

LossValue soft_cross_entropy(const DenseMatrix& logits, const DenseMatrix& targets) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
    throw DimensionError("soft targets must match logits shape");
  }
  if (logits.rows() == 0) throw InvalidArgument("soft_cross_entropy on an empty batch");
  LossValue out{0.0, DenseMatrix(logits.rows(), logits.cols())};
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    const auto lp = log_softmax_row(logits.row(b));
    double mass = 0.0;
    for (std::size_t j = 0; j < lp.size(); ++j) mass += targets(b, j);
    for (std::size_t j = 0; j < lp.size(); ++j) {
      out.loss -= targets(b, j) * lp[j] * inv_b;
      out.grad(b, j) = (mass * std::exp(lp[j]) - targets(b, j)) * inv_b;
    }
  }
  return out;
}

std::vector<std::size_t> resolve_columns(const ClassifierHead& head,
                                         std::span<const std::int64_t> class_ids) {
  std::map<std::int64_t, std::size_t> index;
  for (std::size_t j = 0; j < head.class_ids.size(); ++j) index.emplace(head.class_ids[j], j);
  std::vector<std::size_t> cols;
  cols.reserve(class_ids.size());
  for (std::int64_t id : class_ids) {
    auto it = index.find(id);
    if (it == index.end()) {
      throw UnresolvableClassError("class " + std::to_string(id) +
                                   " has no column in the old classifier");
    }
    cols.push_back(it->second);
  }
  return cols;
}

LossValue influence_loss(const DenseMatrix& new_embeddings, const ClassifierHead& old_head,
                         std::span<const std::int64_t> class_ids) {
  const auto cols = resolve_columns(old_head, class_ids);
  const DenseMatrix z = fit_to_head(new_embeddings, old_head);
  const DenseMatrix logits = head_logits(old_head, z, std::span<const std::size_t>(cols));
  LossValue ce = cross_entropy(logits, cols);
  HeadGrads hg = head_backward(old_head, z, ce.grad);
  return {ce.loss, pad_columns(hg.grad_embeddings, new_embeddings.cols())};
}

LossValue kd_influence_loss(const DenseMatrix& new_embeddings, const DenseMatrix& old_embeddings,
                            const ClassifierHead& old_head, double temperature) {
  if (new_embeddings.rows() != old_embeddings.rows()) {
    throw DimensionError("new and old embedding batches must be aligned");
  }
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be > 0");
  if (new_embeddings.rows() == 0) throw InvalidArgument("kd loss on an empty batch");
  const DenseMatrix zn = fit_to_head(new_embeddings, old_head);
  check_embed_dim(old_head, old_embeddings);
  DenseMatrix new_logits = head_logits(old_head, zn);
  DenseMatrix old_logits = head_logits(old_head, old_embeddings);
  for (double& v : new_logits.data()) v /= temperature;
  for (double& v : old_logits.data()) v /= temperature;

  const double inv_b = 1.0 / static_cast<double>(zn.rows());
  LossValue out{0.0, DenseMatrix(zn.rows(), old_head.num_classes())};
  for (std::size_t b = 0; b < zn.rows(); ++b) {
    const auto lp = log_softmax_row(old_logits.row(b));
    const auto lq = log_softmax_row(new_logits.row(b));
    for (std::size_t j = 0; j < lp.size(); ++j) {
      const double p = std::exp(lp[j]);
      if (p > 0.0) out.loss += p * (lp[j] - lq[j]) * inv_b;
      out.grad(b, j) = (std::exp(lq[j]) - p) * inv_b / temperature;
    }
  }
  // Rounding can leave a tiny negative value when the distributions agree.
  out.loss = std::max(out.loss, 0.0);
  HeadGrads hg = head_backward(old_head, zn, out.grad);
  out.grad = pad_columns(hg.grad_embeddings, new_embeddings.cols());
  return out;
}

LossValue l2_feature_regularizer(const DenseMatrix& new_embeddings,
                                 const DenseMatrix& old_embeddings) {
  if (new_embeddings.rows() != old_embeddings.rows() ||
      new_embeddings.cols() != old_embeddings.cols()) {
    throw DimensionError("l2 regularizer needs equally shaped embedding batches");
  }
  if (new_embeddings.rows() == 0) throw InvalidArgument("l2 regularizer on an empty batch");
  const double inv_b = 1.0 / static_cast<double>(new_embeddings.rows());
  LossValue out{0.0, DenseMatrix(new_embeddings.rows(), new_embeddings.cols())};
  const auto& a = new_embeddings.data();
  const auto& o = old_embeddings.data();
  auto& g = out.grad.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - o[i];
    out.loss += 0.5 * d * d * inv_b;
    g[i] = d * inv_b;
  }
  return out;
}

DenseMatrix lwf_soft_labels(const EmbeddingModel& old_model, const ClassifierHead& old_head,
                            const DenseMatrix& samples) {
  return softmax_rows(head_logits(old_head, old_model.forward(samples)));
}

std::vector<double> synthesize_class_weights(const EmbeddingModel& old_model,
                                             const DenseMatrix& class_samples, bool normalize) {
  if (class_samples.rows() == 0) {
    throw InvalidArgument("cannot synthesize a classifier weight for an empty class");
  }
  const DenseMatrix f = old_model.forward(class_samples);
  std::vector<double> mean(f.cols(), 0.0);
  for (std::size_t r = 0; r < f.rows(); ++r) {
    for (std::size_t c = 0; c < f.cols(); ++c) mean[c] += f(r, c);
  }
  for (double& v : mean) v /= static_cast<double>(f.rows());
  if (normalize) {
    const double n = l2_norm(mean);
    if (!(n > kEpsNorm)) throw DegenerateInputError("synthesized class weight has zero norm");
    for (double& v : mean) v /= n;
  }
  return mean;
}

ClassifierHead extend_with_synthesized(const ClassifierHead& old_head,
                                       const EmbeddingModel& old_model,
                                       const std::map<std::int64_t, DenseMatrix>& new_class_samples) {
  if (old_model.embed_dim() != old_head.embed_dim()) {
    throw DimensionError("old model and old head disagree on embedding dim");
  }
  std::vector<std::pair<std::int64_t, std::vector<double>>> added;
  for (const auto& [id, samples] : new_class_samples) {  // std::map: ascending ids
    if (old_head.column_of(id)) continue;
    added.emplace_back(id, synthesize_class_weights(old_model, samples, old_head.normalizes()));
  }
  ClassifierHead h;
  h.spec = old_head.spec;
  const std::size_t k = old_head.embed_dim(), n0 = old_head.num_classes();
  h.weights = DenseMatrix(k, n0 + added.size());
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < n0; ++c) h.weights(r, c) = old_head.weights(r, c);
    for (std::size_t a = 0; a < added.size(); ++a) h.weights(r, n0 + a) = added[a].second[r];
  }
  h.class_ids = old_head.class_ids;
  for (const auto& a : added) h.class_ids.push_back(a.first);
  if (!old_head.normalizes()) {
    h.bias = DenseMatrix(1, h.class_ids.size());
    for (std::size_t c = 0; c < n0; ++c) h.bias(0, c) = old_head.bias(0, c);
  }
  return h;
}

}  // namespace bct
