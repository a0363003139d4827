#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bct/errors.hpp"
#include "bct/layers.hpp"
#include "bct/matrix.hpp"
#include "bct/model.hpp"
#include "bct/sgd.hpp"
#include "testutil.hpp"

using namespace bct;
using namespace bct::testing_util;

namespace {

constexpr int kInstances = 100;

DenseMatrix naive_matmul(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

// Pushes a relu input away from the kink so central differences are valid.
void avoid_kink(DenseMatrix& x) {
  for (double& v : x.data()) {
    if (std::abs(v) < 1e-3) v = v < 0 ? -0.1 : 0.1;
  }
}

}  // namespace

TEST(Matrix, IdentityWeights) {
  EXPECT_EQ(affine_forward(DenseMatrix{{1, 2}}, DenseMatrix{{1, 0}, {0, 1}}), (DenseMatrix{{1, 2}}));
}

TEST(Matrix, HandArithmeticWithBias) {
  EXPECT_EQ(affine_forward(DenseMatrix{{1, 1}}, DenseMatrix{{2}, {3}}, DenseMatrix{{1}}),
            (DenseMatrix{{6}}));
}

TEST(Matrix, MatmulMatchesTripleLoop) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto n = random_dim(rng, 1, 7), k = random_dim(rng, 1, 7), m = random_dim(rng, 1, 7);
    const auto a = random_matrix(rng, n, k), b = random_matrix(rng, k, m);
    const auto want = naive_matmul(a, b);
    const auto got = matmul(a, b);
    ASSERT_EQ(got.rows(), n);
    ASSERT_EQ(got.cols(), m);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-12);
    const auto tn = matmul_tn(transpose(a), b);
    const auto nt = matmul_nt(a, transpose(b));
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_NEAR(tn.data()[i], want.data()[i], 1e-12);
      EXPECT_NEAR(nt.data()[i], want.data()[i], 1e-12);
    }
  }
}

TEST(Matrix, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(DenseMatrix(2, 3), DenseMatrix(2, 3)), DimensionError);
  EXPECT_THROW(affine_forward(DenseMatrix(1, 2), DenseMatrix(3, 1)), DimensionError);
  EXPECT_THROW(affine_forward(DenseMatrix(1, 2), DenseMatrix(2, 2), DenseMatrix(1, 3)),
               DimensionError);
}

TEST(Affine, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(2);
  const auto x = random_matrix(rng, 3, 4), w = random_matrix(rng, 4, 2);
  const auto g = affine_backward(DenseMatrix(3, 2), x, w);
  for (double v : g.grad_input.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.grad_weights.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.grad_bias.data()) EXPECT_EQ(v, 0.0);
}

TEST(Affine, ScalarCase) {
  const auto g = affine_backward(DenseMatrix{{1.5}}, DenseMatrix{{2.0}}, DenseMatrix{{3.0}});
  EXPECT_DOUBLE_EQ(g.grad_weights(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(g.grad_input(0, 0), 4.5);
  EXPECT_DOUBLE_EQ(g.grad_bias(0, 0), 1.5);
}

TEST(Affine, FiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < kInstances; ++t) {
    const auto b = random_dim(rng, 1, 5), i = random_dim(rng, 1, 6), o = random_dim(rng, 1, 6);
    const auto x = random_matrix(rng, b, i), w = random_matrix(rng, i, o);
    const auto bias = random_matrix(rng, 1, o), r = random_matrix(rng, b, o);
    const auto g = affine_backward(r, x, w);
    const auto nx = numeric_gradient(
        [&](const DenseMatrix& v) { return weighted_sum(affine_forward(v, w, bias), r); }, x);
    const auto nw = numeric_gradient(
        [&](const DenseMatrix& v) { return weighted_sum(affine_forward(x, v, bias), r); }, w);
    const auto nb = numeric_gradient(
        [&](const DenseMatrix& v) { return weighted_sum(affine_forward(x, w, v), r); }, bias);
    EXPECT_LT(relative_error(g.grad_input, nx), 1e-6);
    EXPECT_LT(relative_error(g.grad_weights, nw), 1e-6);
    EXPECT_LT(relative_error(g.grad_bias, nb), 1e-6);
  }
}

TEST(Relu, Examples) {
  EXPECT_EQ(relu_forward(DenseMatrix{{-1, 0, 2}}), (DenseMatrix{{0, 0, 2}}));
  EXPECT_EQ(relu_backward(DenseMatrix{{1, 1, 1}}, DenseMatrix{{-1, 0, 2}}),
            (DenseMatrix{{0, 0, 1}}));
}

TEST(Relu, FiniteDifferencesAwayFromKink) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < kInstances; ++t) {
    auto x = random_matrix(rng, random_dim(rng, 1, 5), random_dim(rng, 1, 8));
    avoid_kink(x);
    const auto r = random_matrix(rng, x.rows(), x.cols());
    const auto n = numeric_gradient(
        [&](const DenseMatrix& v) { return weighted_sum(relu_forward(v), r); }, x);
    EXPECT_LT(relative_error(relu_backward(r, x), n), 1e-6);
  }
}

TEST(L2Norm, Examples) {
  const auto y = l2norm_forward(DenseMatrix{{3, 4}});
  EXPECT_DOUBLE_EQ(y(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.8);
  const DenseMatrix unit{{0.6, 0.8}, {1, 0}};
  const auto u = l2norm_forward(unit);
  for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(u.data()[i], unit.data()[i], 1e-15);
}

TEST(L2Norm, NearZeroRowThrows) {
  EXPECT_THROW(l2norm_forward(DenseMatrix{{1, 0}, {0, 0}}), DegenerateInputError);
  EXPECT_THROW(l2norm_forward(DenseMatrix{{1e-14, 0}}), DegenerateInputError);
}

TEST(L2Norm, FiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < kInstances; ++t) {
    const auto x = random_matrix(rng, random_dim(rng, 1, 5), random_dim(rng, 2, 8));
    const auto r = random_matrix(rng, x.rows(), x.cols());
    const auto n = numeric_gradient(
        [&](const DenseMatrix& v) { return weighted_sum(l2norm_forward(v), r); }, x);
    EXPECT_LT(relative_error(l2norm_backward(r, x), n), 1e-5);
  }
}

TEST(Sgd, Examples) {
  SgdConfig cfg;
  cfg.learning_rate_schedule = {{0, 0.1}};
  cfg.weight_decay = 0.0;
  std::vector<double> p{1.0, -2.0};
  sgd_step(p, std::vector<double>{0.0, 0.0}, cfg, 0);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));

  std::vector<double> q{1.0};
  sgd_step(q, std::vector<double>{1.0}, cfg, 0);
  EXPECT_DOUBLE_EQ(q[0], 0.9);

  cfg.weight_decay = 0.5;
  std::vector<double> r{1.0};
  sgd_step(r, std::vector<double>{0.0}, cfg, 0);
  EXPECT_DOUBLE_EQ(r[0], 0.95);
}

TEST(Sgd, ScheduleLookup) {
  SgdConfig cfg;
  cfg.learning_rate_schedule = {{0, 0.1}, {20, 0.01}, {25, 0.001}};
  EXPECT_DOUBLE_EQ(cfg.rate_at(0), 0.1);
  EXPECT_DOUBLE_EQ(cfg.rate_at(19), 0.1);
  EXPECT_DOUBLE_EQ(cfg.rate_at(20), 0.01);
  EXPECT_DOUBLE_EQ(cfg.rate_at(99), 0.001);
  cfg.learning_rate_schedule = {{1, 0.1}};
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(Sgd, ShapeMismatchThrows) {
  std::vector<double> p{1.0, 2.0};
  EXPECT_THROW(sgd_step(p, std::vector<double>{1.0}, SgdConfig{}, 0), DimensionError);
}

TEST(Model, WholeNetworkFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < kInstances; ++t) {
    const auto in = random_dim(rng, 2, 6), hid = random_dim(rng, 2, 6), out = random_dim(rng, 2, 5);
    const bool relu_tail = t % 2 == 1;
    std::vector<LayerSpec> layers{AffineSpec{in, hid, true}, ReluSpec{},
                                  AffineSpec{hid, out, t % 3 != 0}};
    if (relu_tail) layers.push_back(ReluSpec{});
    layers.push_back(L2NormalizeSpec{});
    EmbeddingModel model(in, layers, 100 + static_cast<std::uint64_t>(t));
    const auto x = random_matrix(rng, random_dim(rng, 1, 4), in);
    const auto r = random_matrix(rng, x.rows(), out);

    // Skip instances with a pre-activation near a kink or a dead embedding.
    ForwardCache cache;
    bool ok = true;
    try {
      model.forward(x, cache);
    } catch (const DegenerateInputError&) {
      ok = false;
    }
    if (ok) {
      for (std::size_t l = 0; l < layers.size(); ++l) {
        if (!std::holds_alternative<ReluSpec>(layers[l])) continue;
        for (double v : cache.inputs[l].data()) ok = ok && std::abs(v) > 1e-3;
      }
    }
    if (!ok) {
      --t;
      continue;
    }
    const auto grads = model.backward(cache, r);
    for (std::size_t p = 0; p < model.params().size(); ++p) {
      const auto nw = numeric_gradient(
          [&](const DenseMatrix& w) {
            EmbeddingModel m = model;
            m.params()[p].weights = w;
            return weighted_sum(m.forward(x), r);
          },
          model.params()[p].weights);
      EXPECT_LT(relative_error(grads[p].weights, nw), 1e-4);
      if (model.params()[p].bias) {
        const auto nb = numeric_gradient(
            [&](const DenseMatrix& b) {
              EmbeddingModel m = model;
              m.params()[p].bias = b;
              return weighted_sum(m.forward(x), r);
            },
            *model.params()[p].bias);
        EXPECT_LT(relative_error(*grads[p].bias, nb), 1e-4);
      }
    }
  }
}

TEST(Model, ForwardIsPure) {
  EmbeddingModel model(4, {AffineSpec{4, 8, true}, ReluSpec{}, AffineSpec{8, 3, true}}, 9);
  std::mt19937_64 rng(7);
  const auto x = random_matrix(rng, 5, 4);
  const auto a = model.forward(x);
  const auto b = model.forward(x);
  EXPECT_EQ(a, b);
  EXPECT_EQ(model, EmbeddingModel(4, model.layers(), 9));
}

TEST(Model, LayerChainValidation) {
  EXPECT_EQ(validate_layer_chain({AffineSpec{3, 5, true}, ReluSpec{}, AffineSpec{5, 2, true}}, 3),
            2u);
  EXPECT_THROW(validate_layer_chain({AffineSpec{3, 5, true}, AffineSpec{4, 2, true}}, 3),
               DimensionError);
  EXPECT_THROW(validate_layer_chain({AffineSpec{2, 5, true}}, 3), DimensionError);
}
