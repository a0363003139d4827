#include "bct/layers.hpp"

#include <string>

#include "bct/errors.hpp"

namespace bct {

std::size_t validate_layer_chain(const std::vector<LayerSpec>& layers, std::size_t input_dim) {
  std::size_t dim = input_dim;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (const auto* a = std::get_if<AffineSpec>(&layers[i])) {
      if (a->in_dim != dim) {
        throw DimensionError("layer " + std::to_string(i) + " expects input dim " +
                             std::to_string(a->in_dim) + " but receives " +
                             std::to_string(dim));
      }
      if (a->out_dim == 0) throw DimensionError("affine layer with zero output dim");
      dim = a->out_dim;
    }
  }
  return dim;
}

DenseMatrix affine_forward(const DenseMatrix& input, const DenseMatrix& weights,
                           const std::optional<DenseMatrix>& bias) {
  if (input.cols() != weights.rows()) {
    throw DimensionError("affine input has " + std::to_string(input.cols()) +
                         " columns, weights expect " + std::to_string(weights.rows()));
  }
  DenseMatrix out = matmul(input, weights);
  if (bias) {
    if (bias->rows() != 1 || bias->cols() != weights.cols()) {
      throw DimensionError("affine bias must be 1x" + std::to_string(weights.cols()));
    }
    for (std::size_t r = 0; r < out.rows(); ++r) {
      auto row = out.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += (*bias)(0, c);
    }
  }
  return out;
}

AffineGrads affine_backward(const DenseMatrix& grad_out, const DenseMatrix& cached_input,
                            const DenseMatrix& weights) {
  if (grad_out.rows() != cached_input.rows() || cached_input.cols() != weights.rows() ||
      grad_out.cols() != weights.cols()) {
    throw DimensionError("affine_backward shapes do not match the forward pass");
  }
  AffineGrads g;
  g.grad_input = matmul_nt(grad_out, weights);
  g.grad_weights = matmul_tn(cached_input, grad_out);
  g.grad_bias = DenseMatrix(1, grad_out.cols());
  for (std::size_t r = 0; r < grad_out.rows(); ++r) {
    for (std::size_t c = 0; c < grad_out.cols(); ++c) g.grad_bias(0, c) += grad_out(r, c);
  }
  return g;
}

DenseMatrix relu_forward(const DenseMatrix& x) {
  DenseMatrix out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

DenseMatrix relu_backward(const DenseMatrix& grad_out, const DenseMatrix& cached_input) {
  if (grad_out.rows() != cached_input.rows() || grad_out.cols() != cached_input.cols()) {
    throw DimensionError("relu_backward shape mismatch");
  }
  DenseMatrix g = grad_out;
  const auto& x = cached_input.data();
  auto& d = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(x[i] > 0.0)) d[i] = 0.0;
  }
  return g;
}

DenseMatrix l2norm_forward(const DenseMatrix& x) {
  DenseMatrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double n = l2_norm(x.row(r));
    if (!(n > kEpsNorm)) {
      throw DegenerateInputError("row " + std::to_string(r) +
                                 " has near-zero norm and cannot be normalized");
    }
    for (double& v : out.row(r)) v /= n;
  }
  return out;
}

DenseMatrix l2norm_backward(const DenseMatrix& grad_out, const DenseMatrix& cached_input) {
  if (grad_out.rows() != cached_input.rows() || grad_out.cols() != cached_input.cols()) {
    throw DimensionError("l2norm_backward shape mismatch");
  }
  DenseMatrix g(grad_out.rows(), grad_out.cols());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    auto x = cached_input.row(r);
    auto go = grad_out.row(r);
    const double n = l2_norm(x);
    if (!(n > kEpsNorm)) throw DegenerateInputError("l2norm_backward on near-zero row");
    double proj = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) proj += x[c] * go[c];
    proj /= n * n;
    auto out = g.row(r);
    for (std::size_t c = 0; c < x.size(); ++c) out[c] = (go[c] - x[c] * proj) / n;
  }
  return g;
}

}  // namespace bct
