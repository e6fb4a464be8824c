#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "fnfm/gradcheck.hpp"
#include "fnfm/layers.hpp"
#include "test_util.hpp"

using namespace fnfm;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, Real scale = 1.0) {
  Matrix m(r, c);
  std::normal_distribution<Real> d(0.0, scale);
  for (Real& v : m.data()) v = d(rng);
  return m;
}

}  // namespace

TEST(Activations, SigmoidSoftplusIdentities) {
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(2.0) + sigmoid(-2.0), 1.0, 1e-15);
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  // softplus(x) - softplus(-x) = x
  for (Real x : {-30.0, -3.0, 0.7, 25.0})
    EXPECT_NEAR(softplus(x) - softplus(-x), x, 1e-12);
  // No overflow at extreme logits.
  EXPECT_DOUBLE_EQ(sigmoid(800.0), 1.0);
  EXPECT_DOUBLE_EQ(sigmoid(-800.0), 0.0);
  EXPECT_DOUBLE_EQ(softplus(800.0), 800.0);
  EXPECT_DOUBLE_EQ(softplus(-800.0), 0.0);
}

TEST(Activations, ReluAndGate) {
  Matrix x(1, 4);
  x(0, 0) = -1.0; x(0, 1) = 0.0; x(0, 2) = 2.5; x(0, 3) = -0.0;
  Matrix y = relu(x);
  EXPECT_EQ(y(0, 0), 0.0);
  EXPECT_EQ(y(0, 1), 0.0);
  EXPECT_EQ(y(0, 2), 2.5);

  Matrix up(1, 4);
  up.fill(3.0);
  Matrix g = relu_backward(up, x);
  EXPECT_EQ(g(0, 0), 0.0);
  EXPECT_EQ(g(0, 1), 0.0);  // subgradient at 0 is 0
  EXPECT_EQ(g(0, 2), 3.0);

  Matrix bad(2, 4);
  EXPECT_THROW(relu_backward(bad, x), ShapeError);
}

TEST(Dense, ForwardMatchesManualAffine) {
  DenseLayer layer;
  layer.W = Matrix(2, 3);
  layer.W(0, 0) = 1; layer.W(0, 1) = 2; layer.W(0, 2) = 3;
  layer.W(1, 0) = -1; layer.W(1, 1) = 0.5; layer.W(1, 2) = 0;
  layer.b = {10, -10};
  Matrix x(2, 3);
  x(0, 0) = 1; x(0, 1) = 1; x(0, 2) = 1;
  x(1, 0) = 2; x(1, 1) = 0; x(1, 2) = -2;
  Matrix y = dense_forward(layer, x);
  EXPECT_DOUBLE_EQ(y(0, 0), 16.0);
  EXPECT_DOUBLE_EQ(y(0, 1), -10.5);
  EXPECT_DOUBLE_EQ(y(1, 0), 6.0);
  EXPECT_DOUBLE_EQ(y(1, 1), -12.0);

  Matrix wrong(2, 4);
  EXPECT_THROW(dense_forward(layer, wrong), ShapeError);
}

TEST(Dense, BackwardMatchesFiniteDifferences) {
  Rng rng(7);
  DenseLayer layer;
  layer.W = random_matrix(4, 3, rng);
  layer.b = {0.1, -0.2, 0.3, 0.0};
  Matrix x = random_matrix(5, 3, rng);
  // Loss = sum of squares of outputs: upstream = 2*Y.
  auto loss_fn = [&]() {
    Matrix y = dense_forward(layer, x);
    Real s = 0;
    for (Real v : y.data()) s += v * v;
    return s;
  };
  DenseCache cache;
  Matrix y = dense_forward(layer, x, &cache);
  Matrix up = y;
  for (Real& v : up.data()) v *= 2.0;
  DenseGrads g = dense_backward(layer, cache, up);

  std::vector<GradCheckBlock> blocks;
  blocks.push_back({"W", std::span<Real>(layer.W.data()), g.dW.data()});
  blocks.push_back({"b", std::span<Real>(layer.b), g.db});
  blocks.push_back({"x", std::span<Real>(x.data()), g.dX.data()});
  GradCheckReport rep = grad_check(loss_fn, std::move(blocks));
  EXPECT_TRUE(rep.passed(1e-6)) << rep.failure_location;
}

TEST(Dense, BackwardWithoutForwardThrows) {
  DenseLayer layer;
  layer.W = Matrix(2, 2);
  layer.b = {0, 0};
  DenseCache cache;
  Matrix up(1, 2);
  EXPECT_THROW(dense_backward(layer, cache, up), StateError);
}

TEST(BatchNorm, TrainModeNormalizesExactly) {
  // Inputs with per-dimension variance >= 1, so the epsilon in the
  // denominator perturbs the normalized variance by at most eps/(var+eps).
  Rng rng(11);
  std::size_t batch = 256, width = 16;
  Matrix x = random_matrix(batch, width, rng, 2.0);
  BatchNormLayer bn = make_batchnorm(width);
  BatchNormCache cache;
  Matrix y = batchnorm_forward_train(bn, x, cache);
  for (std::size_t d = 0; d < width; ++d) {
    Real mean = 0, var = 0;
    for (std::size_t i = 0; i < batch; ++i) mean += y(i, d);
    mean /= static_cast<Real>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      Real c = y(i, d) - mean;
      var += c * c;
    }
    var /= static_cast<Real>(batch);
    EXPECT_LE(std::abs(mean), 1e-6);
    EXPECT_LE(std::abs(var - 1.0), 1e-5);
  }
}

TEST(BatchNorm, GammaBetaApplyAfterNormalization) {
  Rng rng(13);
  Matrix x = random_matrix(64, 3, rng, 1.5);
  BatchNormLayer bn = make_batchnorm(3);
  bn.gamma = {2.0, 0.5, -1.0};
  bn.beta = {1.0, 0.0, 3.0};
  BatchNormCache cache;
  Matrix y = batchnorm_forward_train(bn, x, cache);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t d = 0; d < 3; ++d)
      EXPECT_NEAR(y(i, d), bn.gamma[d] * cache.xhat(i, d) + bn.beta[d], 1e-14);
}

TEST(BatchNorm, RunningStatsBlendWithUnbiasedVariance) {
  Rng rng(17);
  std::size_t batch = 32, width = 4;
  Matrix x = random_matrix(batch, width, rng, 3.0);
  BatchNormLayer bn = make_batchnorm(width);
  bn.momentum = 0.25;
  std::vector<Real> mean(width, 0.0), var(width, 0.0);
  for (std::size_t d = 0; d < width; ++d) {
    for (std::size_t i = 0; i < batch; ++i) mean[d] += x(i, d);
    mean[d] /= batch;
    for (std::size_t i = 0; i < batch; ++i) var[d] += (x(i, d) - mean[d]) * (x(i, d) - mean[d]);
    var[d] /= batch;
  }
  BatchNormCache cache;
  batchnorm_forward_train(bn, x, cache);
  for (std::size_t d = 0; d < width; ++d) {
    EXPECT_NEAR(bn.running_mean[d], 0.75 * 0.0 + 0.25 * mean[d], 1e-12);
    Real unbiased = var[d] * batch / (batch - 1.0);
    EXPECT_NEAR(bn.running_var[d], 0.75 * 1.0 + 0.25 * unbiased, 1e-12);
  }

  // update_running=false must leave the running stats untouched.
  BatchNormLayer frozen = make_batchnorm(width);
  auto rm = frozen.running_mean, rv = frozen.running_var;
  batchnorm_forward_train(frozen, x, cache, false);
  EXPECT_EQ(frozen.running_mean, rm);
  EXPECT_EQ(frozen.running_var, rv);
}

TEST(BatchNorm, SingletonBatchRejected) {
  BatchNormLayer bn = make_batchnorm(4);
  Matrix one(1, 4);
  BatchNormCache cache;
  EXPECT_THROW(batchnorm_forward_train(bn, one, cache), ShapeError);
  Matrix wrong(8, 5);
  EXPECT_THROW(batchnorm_forward_train(bn, wrong, cache), ShapeError);
  EXPECT_THROW(batchnorm_forward_infer(bn, wrong), ShapeError);
}

TEST(BatchNorm, InferenceIsRowwiseAffine) {
  Rng rng(19);
  BatchNormLayer bn = make_batchnorm(5);
  bn.running_mean = {1, -1, 0.5, 2, 0};
  bn.running_var = {1, 2, 0.5, 4, 9};
  bn.gamma = {1, 2, 3, 4, 5};
  bn.beta = {0.1, 0.2, 0.3, 0.4, 0.5};
  Matrix x = random_matrix(40, 5, rng);
  Matrix y = batchnorm_forward_infer(bn, x);
  // Per-row check against the closed form.
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t d = 0; d < 5; ++d) {
      Real expect = bn.gamma[d] * (x(i, d) - bn.running_mean[d]) /
                        std::sqrt(bn.running_var[d] + bn.epsilon) +
                    bn.beta[d];
      EXPECT_NEAR(y(i, d), expect, 1e-12);
    }
  // Row order must not matter: score a permuted copy and compare rows.
  Matrix perm(x.rows(), 5);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t d = 0; d < 5; ++d) perm(i, d) = x(x.rows() - 1 - i, d);
  Matrix yp = batchnorm_forward_infer(bn, perm);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t d = 0; d < 5; ++d)
      EXPECT_EQ(yp(i, d), y(x.rows() - 1 - i, d));
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
  Rng rng(23);
  std::size_t batch = 6, width = 3;
  Matrix x = random_matrix(batch, width, rng);
  BatchNormLayer bn = make_batchnorm(width);
  bn.gamma = {1.3, 0.7, -0.4};
  bn.beta = {0.2, -0.1, 0.05};

  // Loss = weighted sum of outputs squared, in training mode with frozen
  // running stats so the loss is a pure function of (x, gamma, beta).
  auto loss_fn = [&]() {
    BatchNormCache c;
    Matrix y = batchnorm_forward_train(bn, x, c, false);
    Real s = 0;
    for (std::size_t i = 0; i < y.data().size(); ++i)
      s += y.data()[i] * y.data()[i] * (0.5 + 0.1 * static_cast<Real>(i % 7));
    return s;
  };
  BatchNormCache cache;
  Matrix y = batchnorm_forward_train(bn, x, cache, false);
  Matrix up(batch, width);
  for (std::size_t i = 0; i < y.data().size(); ++i)
    up.data()[i] = 2.0 * y.data()[i] * (0.5 + 0.1 * static_cast<Real>(i % 7));
  BatchNormGrads g = batchnorm_backward(bn, cache, up);

  std::vector<GradCheckBlock> blocks;
  blocks.push_back({"x", std::span<Real>(x.data()), g.dX.data()});
  blocks.push_back({"gamma", std::span<Real>(bn.gamma), g.dgamma});
  blocks.push_back({"beta", std::span<Real>(bn.beta), g.dbeta});
  GradCheckReport rep = grad_check(loss_fn, std::move(blocks));
  EXPECT_TRUE(rep.passed(1e-5)) << rep.failure_location;
}

TEST(BatchNorm, BackwardWithoutForwardThrows) {
  BatchNormLayer bn = make_batchnorm(2);
  BatchNormCache cache;
  Matrix up(4, 2);
  EXPECT_THROW(batchnorm_backward(bn, cache, up), StateError);
}

TEST(Init, PoliciesProduceExpectedDistributions) {
  Rng rng(29);
  std::vector<Real> buf(20000);
  init_fill(buf, InitPolicy::gaussian(0.01), rng);
  Real mean = std::accumulate(buf.begin(), buf.end(), 0.0) / buf.size();
  Real var = 0;
  for (Real v : buf) var += (v - mean) * (v - mean);
  var /= buf.size();
  EXPECT_NEAR(mean, 0.0, 5 * 0.01 / std::sqrt(20000.0));
  EXPECT_NEAR(std::sqrt(var), 0.01, 0.001);

  init_fill(buf, InitPolicy::uniform(0.5), rng);
  for (Real v : buf) {
    EXPECT_GE(v, -0.5);
    EXPECT_LE(v, 0.5);
  }

  init_fill(buf, InitPolicy::zeros(), rng);
  for (Real v : buf) EXPECT_EQ(v, 0.0);

  EXPECT_NEAR(glorot_bound(60, 64), std::sqrt(6.0 / 124.0), 1e-15);
}
