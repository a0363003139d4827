#pragma once

#include <cstddef>
#include <optional>
#include <variant>
#include <vector>

#include "bct/matrix.hpp"

namespace bct {

// Inputs with an L2 norm below this are rejected by l2norm_forward.
inline constexpr double kEpsNorm = 1e-12;

struct AffineSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  bool has_bias = true;
  bool operator==(const AffineSpec&) const = default;
};
struct ReluSpec {
  bool operator==(const ReluSpec&) const = default;
};
struct L2NormalizeSpec {
  bool operator==(const L2NormalizeSpec&) const = default;
};

using LayerSpec = std::variant<AffineSpec, ReluSpec, L2NormalizeSpec>;

// Checks that consecutive Affine dims chain; returns the output dim for
// the given input dim.
std::size_t validate_layer_chain(const std::vector<LayerSpec>& layers, std::size_t input_dim);

// input [B x I] * weights [I x O] (+ bias [1 x O] broadcast per row).
DenseMatrix affine_forward(const DenseMatrix& input, const DenseMatrix& weights,
                           const std::optional<DenseMatrix>& bias = std::nullopt);

struct AffineGrads {
  DenseMatrix grad_input;    // [B x I]
  DenseMatrix grad_weights;  // [I x O]
  DenseMatrix grad_bias;     // [1 x O]
};

AffineGrads affine_backward(const DenseMatrix& grad_out, const DenseMatrix& cached_input,
                            const DenseMatrix& weights);

DenseMatrix relu_forward(const DenseMatrix& x);
// Gradient passes only where cached_input > 0; the subgradient at exactly
// zero is taken to be 0.
DenseMatrix relu_backward(const DenseMatrix& grad_out, const DenseMatrix& cached_input);

// Row-wise x / ||x||. Throws DegenerateInputError if any row has norm
// below kEpsNorm.
DenseMatrix l2norm_forward(const DenseMatrix& x);
// Row-wise (I - x_hat x_hat^T) g / ||x||.
DenseMatrix l2norm_backward(const DenseMatrix& grad_out, const DenseMatrix& cached_input);

}  // namespace bct
