#include "bct/model.hpp"

#include <cmath>
#include <random>

#include "bct/errors.hpp"

namespace bct {

namespace {

std::size_t count_affine(const std::vector<LayerSpec>& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += std::holds_alternative<AffineSpec>(l) ? 1 : 0;
  return n;
}

}  // namespace

EmbeddingModel::EmbeddingModel(std::size_t input_dim, std::vector<LayerSpec> layers,
                               std::uint64_t seed)
    : input_dim_(input_dim), layers_(std::move(layers)) {
  embed_dim_ = validate_layer_chain(layers_, input_dim_);
  std::mt19937_64 rng(seed);
  for (const auto& l : layers_) {
    const auto* a = std::get_if<AffineSpec>(&l);
    if (!a) continue;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(a->in_dim)));
    AffineParams p;
    p.weights = DenseMatrix(a->in_dim, a->out_dim);
    for (double& w : p.weights.data()) w = dist(rng);
    if (a->has_bias) p.bias = DenseMatrix(1, a->out_dim);
    params_.push_back(std::move(p));
  }
}

EmbeddingModel::EmbeddingModel(std::size_t input_dim, std::vector<LayerSpec> layers,
                               std::vector<AffineParams> params)
    : input_dim_(input_dim), layers_(std::move(layers)), params_(std::move(params)) {
  embed_dim_ = validate_layer_chain(layers_, input_dim_);
  if (params_.size() != count_affine(layers_)) {
    throw DimensionError("parameter count does not match the number of affine layers");
  }
  std::size_t k = 0;
  for (const auto& l : layers_) {
    const auto* a = std::get_if<AffineSpec>(&l);
    if (!a) continue;
    const auto& p = params_[k++];
    if (p.weights.rows() != a->in_dim || p.weights.cols() != a->out_dim) {
      throw DimensionError("affine weights do not match layer spec");
    }
    if (a->has_bias != p.bias.has_value() ||
        (p.bias && (p.bias->rows() != 1 || p.bias->cols() != a->out_dim))) {
      throw DimensionError("affine bias does not match layer spec");
    }
  }
}

DenseMatrix EmbeddingModel::forward(const DenseMatrix& x) const {
  ForwardCache unused;
  return forward(x, unused);
}

DenseMatrix EmbeddingModel::forward(const DenseMatrix& x, ForwardCache& cache) const {
  if (x.cols() != input_dim_) {
    throw DimensionError("model expects input dim " + std::to_string(input_dim_) + ", got " +
                         std::to_string(x.cols()));
  }
  cache.inputs.clear();
  cache.inputs.reserve(layers_.size() + 1);
  cache.inputs.push_back(x);
  std::size_t k = 0;
  for (const auto& l : layers_) {
    const DenseMatrix& in = cache.inputs.back();
    DenseMatrix out;
    if (std::holds_alternative<AffineSpec>(l)) {
      const auto& p = params_[k++];
      out = affine_forward(in, p.weights, p.bias);
    } else if (std::holds_alternative<ReluSpec>(l)) {
      out = relu_forward(in);
    } else {
      out = l2norm_forward(in);
    }
    cache.inputs.push_back(std::move(out));
  }
  return cache.inputs.back();
}

ModelGrads EmbeddingModel::backward(const ForwardCache& cache, const DenseMatrix& grad_out) const {
  if (cache.inputs.size() != layers_.size() + 1) {
    throw DimensionError("forward cache does not belong to this model");
  }
  ModelGrads grads(params_.size());
  DenseMatrix g = grad_out;
  std::size_t k = params_.size();
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const DenseMatrix& in = cache.inputs[i];
    const auto& l = layers_[i];
    if (std::holds_alternative<AffineSpec>(l)) {
      const auto& p = params_[--k];
      AffineGrads ag = affine_backward(g, in, p.weights);
      grads[k].weights = std::move(ag.grad_weights);
      if (p.bias) grads[k].bias = std::move(ag.grad_bias);
      g = std::move(ag.grad_input);
    } else if (std::holds_alternative<ReluSpec>(l)) {
      g = relu_backward(g, in);
    } else {
      g = l2norm_backward(g, in);
    }
  }
  return grads;
}

void EmbeddingModel::apply_sgd(const ModelGrads& grads, const SgdConfig& config, int epoch) {
  if (grads.size() != params_.size()) throw DimensionError("gradient layout mismatch");
  for (std::size_t k = 0; k < params_.size(); ++k) {
    sgd_step(params_[k].weights.data(), grads[k].weights.data(), config, epoch);
    if (params_[k].bias) {
      sgd_step(params_[k].bias->data(), grads[k].bias->data(), config, epoch);
    }
  }
}

}  // namespace bct
