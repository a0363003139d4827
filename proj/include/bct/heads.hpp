#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bct/matrix.hpp"
#include "bct/model.hpp"

namespace bct {

enum class HeadVariant { Softmax, NormSoftmax, CosineMargin };

std::string to_string(HeadVariant v);
HeadVariant head_variant_from_string(const std::string& s);

struct HeadSpec {
  HeadVariant variant = HeadVariant::CosineMargin;
  double scale = 16.0;   // s, NormSoftmax / CosineMargin
  double margin = 0.25;  // m, CosineMargin only
  void validate() const;
  bool operator==(const HeadSpec&) const = default;
};

// Classifier kappa over N classes with weights [K x N]. Column j scores
// dataset class class_ids[j].
struct ClassifierHead {
  HeadSpec spec;
  DenseMatrix weights;                 // [K x N]
  DenseMatrix bias;                    // [1 x N] for Softmax, empty otherwise
  std::vector<std::int64_t> class_ids;

  static ClassifierHead init(const HeadSpec& spec, std::size_t embed_dim,
                             std::vector<std::int64_t> class_ids, std::uint64_t seed);

  std::size_t embed_dim() const { return weights.rows(); }
  std::size_t num_classes() const { return weights.cols(); }
  bool normalizes() const { return spec.variant != HeadVariant::Softmax; }
  std::optional<std::size_t> column_of(std::int64_t class_id) const;
  void validate() const;
  bool operator==(const ClassifierHead&) const = default;
};

// Loss with the gradient w.r.t. the loss's differentiable input (logits
// for cross-entropy, new-model embeddings for the compatibility losses).
struct LossValue {
  double loss = 0.0;
  DenseMatrix grad;
};

// Logits [B x N]. Softmax: zW + b. Normalized variants: s * cos(theta).
// CosineMargin subtracts m from the target column's cosine when `targets`
// (column indices) are supplied; without targets no margin is applied.
DenseMatrix head_logits(const ClassifierHead& head, const DenseMatrix& embeddings,
                        std::optional<std::span<const std::size_t>> targets = std::nullopt);

struct HeadGrads {
  DenseMatrix grad_embeddings;  // [B x K]
  DenseMatrix grad_weights;     // [K x N]
  DenseMatrix grad_bias;        // [1 x N], Softmax only
};

HeadGrads head_backward(const ClassifierHead& head, const DenseMatrix& embeddings,
                        const DenseMatrix& grad_logits);

DenseMatrix softmax_rows(const DenseMatrix& logits);

// Mean over the batch of -log softmax(logits)[label]; labels are columns.
LossValue cross_entropy(const DenseMatrix& logits, std::span<const std::size_t> labels);
// Mean over the batch of -sum_j t_j log softmax(logits)_j.
LossValue soft_cross_entropy(const DenseMatrix& logits, const DenseMatrix& targets);

// Maps dataset class ids onto head columns; throws UnresolvableClassError.
std::vector<std::size_t> resolve_columns(const ClassifierHead& head,
                                         std::span<const std::int64_t> class_ids);

// Cross-entropy of new-model embeddings through a frozen old classifier.
// Embeddings wider than the head are truncated to their first K_old
// coordinates; the returned gradient has the embeddings' full width, zero
// beyond K_old.
LossValue influence_loss(const DenseMatrix& new_embeddings, const ClassifierHead& old_head,
                         std::span<const std::int64_t> class_ids);

// KL(softmax(old/T) || softmax(new/T)) through the old head, averaged over
// the batch. The old side is treated as a constant.
LossValue kd_influence_loss(const DenseMatrix& new_embeddings, const DenseMatrix& old_embeddings,
                            const ClassifierHead& old_head, double temperature);

// Mean over the batch of 0.5 * ||new - old||^2.
LossValue l2_feature_regularizer(const DenseMatrix& new_embeddings,
                                 const DenseMatrix& old_embeddings);

// Soft labels of samples under the frozen old model and head.
DenseMatrix lwf_soft_labels(const EmbeddingModel& old_model, const ClassifierHead& old_head,
                            const DenseMatrix& samples);

// Mean old-model feature over one class's samples, unit-normalized when
// `normalize` is set.
std::vector<double> synthesize_class_weights(const EmbeddingModel& old_model,
                                             const DenseMatrix& class_samples, bool normalize);

// Old head plus one synthesized column per new class, appended in ascending
// class-id order. Classes already present in the head are skipped.
ClassifierHead extend_with_synthesized(const ClassifierHead& old_head,
                                       const EmbeddingModel& old_model,
                                       const std::map<std::int64_t, DenseMatrix>& new_class_samples);

}  // namespace bct
