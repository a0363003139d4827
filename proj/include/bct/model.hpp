#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "bct/layers.hpp"
#include "bct/matrix.hpp"
#include "bct/sgd.hpp"

namespace bct {

struct AffineParams {
  DenseMatrix weights;               // [in x out]
  std::optional<DenseMatrix> bias;   // [1 x out]
  bool operator==(const AffineParams&) const = default;
};

// Per-Affine-layer gradients, same layout as the model's parameters.
using ModelGrads = std::vector<AffineParams>;

// Layer inputs recorded during a training forward pass; inputs[i] is the
// input of layer i, and the last entry is the model output.
struct ForwardCache {
  std::vector<DenseMatrix> inputs;
};

// Feed-forward embedding map x -> z built from a closed set of layers.
class EmbeddingModel {
 public:
  EmbeddingModel() = default;
  // He-normal weights, zero biases, drawn from `seed`.
  EmbeddingModel(std::size_t input_dim, std::vector<LayerSpec> layers, std::uint64_t seed);
  EmbeddingModel(std::size_t input_dim, std::vector<LayerSpec> layers,
                 std::vector<AffineParams> params);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t embed_dim() const { return embed_dim_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<AffineParams>& params() const { return params_; }
  std::vector<AffineParams>& params() { return params_; }

  DenseMatrix forward(const DenseMatrix& x) const;
  DenseMatrix forward(const DenseMatrix& x, ForwardCache& cache) const;
  ModelGrads backward(const ForwardCache& cache, const DenseMatrix& grad_out) const;

  void apply_sgd(const ModelGrads& grads, const SgdConfig& config, int epoch);

  bool operator==(const EmbeddingModel&) const = default;

 private:
  std::size_t input_dim_ = 0;
  std::size_t embed_dim_ = 0;
  std::vector<LayerSpec> layers_;
  std::vector<AffineParams> params_;
};

}  // namespace bct
