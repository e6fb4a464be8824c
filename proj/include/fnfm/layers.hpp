#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fnfm/common.hpp"

namespace fnfm {

// Numerically stable logistic: split by sign so exp never overflows.
inline Real sigmoid(Real x) {
  if (x >= 0) {
    Real e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  Real e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x) without overflow.
inline Real softplus(Real x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (Real& v : y.data()) v = v > 0 ? v : 0.0;
  return y;
}

// Gradient gate uses the pre-activation; the subgradient at exactly 0 is 0.
inline Matrix relu_backward(const Matrix& upstream, const Matrix& pre) {
  if (upstream.rows() != pre.rows() || upstream.cols() != pre.cols())
    throw ShapeError("relu_backward shape mismatch");
  Matrix g = upstream;
  for (std::size_t i = 0; i < g.data().size(); ++i)
    if (!(pre.data()[i] > 0)) g.data()[i] = 0.0;
  return g;
}

// ---------------------------------------------------------------------------
// Dense affine layer. Parameters only; the forward cache lives in a separate
// DenseCache so frozen layers can score concurrently.

struct DenseLayer {
  Matrix W;             // [out x in]
  std::vector<Real> b;  // [out]

  std::size_t in() const { return W.cols(); }
  std::size_t out() const { return W.rows(); }

  bool operator==(const DenseLayer&) const = default;
};

struct DenseCache {
  Matrix input;
  bool valid = false;
};

// Y[i] = W x_i + b. Pass a cache to keep the input for backward; inference
// passes nullptr and leaves no trace.
inline Matrix dense_forward(const DenseLayer& layer, const Matrix& x,
                            DenseCache* cache = nullptr) {
  if (x.cols() != layer.in()) throw ShapeError("dense_forward: input width mismatch");
  Matrix y(x.rows(), layer.out());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    auto yi = y.row(i);
    for (std::size_t o = 0; o < layer.out(); ++o) {
      auto w = layer.W.row(o);
      Real acc = layer.b[o];
      for (std::size_t k = 0; k < layer.in(); ++k) acc += w[k] * xi[k];
      yi[o] = acc;
    }
  }
  if (cache) {
    cache->input = x;
    cache->valid = true;
  }
  return y;
}

struct DenseGrads {
  Matrix dW;
  std::vector<Real> db;
  Matrix dX;
};

// Gradients of the summed scalar loss: dW accumulates over the batch,
// db = column sums of dY.
inline DenseGrads dense_backward(const DenseLayer& layer, const DenseCache& cache,
                                 const Matrix& upstream) {
  if (!cache.valid) throw StateError("dense_backward without cached forward");
  if (upstream.rows() != cache.input.rows() || upstream.cols() != layer.out())
    throw ShapeError("dense_backward: upstream shape mismatch");
  DenseGrads g;
  g.dW = Matrix(layer.out(), layer.in());
  g.db.assign(layer.out(), 0.0);
  g.dX = Matrix(cache.input.rows(), layer.in());
  for (std::size_t i = 0; i < upstream.rows(); ++i) {
    auto dyi = upstream.row(i);
    auto xi = cache.input.row(i);
    auto dxi = g.dX.row(i);
    for (std::size_t o = 0; o < layer.out(); ++o) {
      Real dy = dyi[o];
      g.db[o] += dy;
      if (dy == 0.0) continue;
      auto wrow = layer.W.row(o);
      auto dwrow = g.dW.row(o);
      for (std::size_t k = 0; k < layer.in(); ++k) {
        dwrow[k] += dy * xi[k];
        dxi[k] += dy * wrow[k];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization

struct BatchNormLayer {
  std::vector<Real> gamma, beta;
  std::vector<Real> running_mean, running_var;
  Real momentum = 0.1;  // weight of the fresh batch statistic
  Real epsilon = 1e-5;

  std::size_t width() const { return gamma.size(); }

  bool operator==(const BatchNormLayer&) const = default;
};

inline BatchNormLayer make_batchnorm(std::size_t width) {
  BatchNormLayer bn;
  bn.gamma.assign(width, 1.0);
  bn.beta.assign(width, 0.0);
  bn.running_mean.assign(width, 0.0);
  bn.running_var.assign(width, 1.0);
  return bn;
}

struct BatchNormCache {
  Matrix xhat;                // normalized pre-affine values
  Matrix centered;            // x - mean
  std::vector<Real> inv_std;  // 1/sqrt(var + eps), biased variance
  bool valid = false;
};

// Training-mode forward: normalize by batch statistics (variance denominator
// B), then scale/shift. Running statistics move toward the batch values;
// running_var stores the unbiased estimate when B > 1.
inline Matrix batchnorm_forward_train(BatchNormLayer& bn, const Matrix& x,
                                      BatchNormCache& cache, bool update_running = true) {
  std::size_t batch = x.rows(), width = x.cols();
  if (width != bn.width()) throw ShapeError("batchnorm width mismatch");
  if (batch < 2) throw ShapeError("batchnorm training needs batch >= 2");
  std::vector<Real> mean(width, 0.0), var(width, 0.0);
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t d = 0; d < width; ++d) mean[d] += x(i, d);
  for (std::size_t d = 0; d < width; ++d) mean[d] /= static_cast<Real>(batch);
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t d = 0; d < width; ++d) {
      Real c = x(i, d) - mean[d];
      var[d] += c * c;
    }
  for (std::size_t d = 0; d < width; ++d) var[d] /= static_cast<Real>(batch);

  cache.centered = Matrix(batch, width);
  cache.xhat = Matrix(batch, width);
  cache.inv_std.resize(width);
  Matrix y(batch, width);
  for (std::size_t d = 0; d < width; ++d)
    cache.inv_std[d] = 1.0 / std::sqrt(var[d] + bn.epsilon);
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t d = 0; d < width; ++d) {
      Real c = x(i, d) - mean[d];
      Real xh = c * cache.inv_std[d];
      cache.centered(i, d) = c;
      cache.xhat(i, d) = xh;
      y(i, d) = bn.gamma[d] * xh + bn.beta[d];
    }
  cache.valid = true;

  if (update_running) {
    Real m = bn.momentum;
    Real unbias = batch > 1 ? static_cast<Real>(batch) / static_cast<Real>(batch - 1) : 1.0;
    for (std::size_t d = 0; d < width; ++d) {
      bn.running_mean[d] = (1.0 - m) * bn.running_mean[d] + m * mean[d];
      bn.running_var[d] = (1.0 - m) * bn.running_var[d] + m * var[d] * unbias;
    }
  }
  return y;
}

// Inference-mode forward: a fixed per-dimension affine map from the running
// statistics; independent of batch composition.
inline Matrix batchnorm_forward_infer(const BatchNormLayer& bn, const Matrix& x) {
  if (x.cols() != bn.width()) throw ShapeError("batchnorm width mismatch");
  Matrix y(x.rows(), x.cols());
  for (std::size_t d = 0; d < bn.width(); ++d) {
    Real inv = 1.0 / std::sqrt(bn.running_var[d] + bn.epsilon);
    Real scale = bn.gamma[d] * inv;
    Real shift = bn.beta[d] - bn.gamma[d] * bn.running_mean[d] * inv;
    for (std::size_t i = 0; i < x.rows(); ++i) y(i, d) = scale * x(i, d) + shift;
  }
  return y;
}

struct BatchNormGrads {
  Matrix dX;
  std::vector<Real> dgamma, dbeta;
};

// Exact gradient through the normalization, including the dependence of the
// batch mean and variance on every element.
inline BatchNormGrads batchnorm_backward(const BatchNormLayer& bn,
                                         const BatchNormCache& cache,
                                         const Matrix& upstream) {
  if (!cache.valid) throw StateError("batchnorm_backward without training forward");
  std::size_t batch = cache.xhat.rows(), width = cache.xhat.cols();
  if (upstream.rows() != batch || upstream.cols() != width)
    throw ShapeError("batchnorm_backward: upstream shape mismatch");
  BatchNormGrads g;
  g.dgamma.assign(width, 0.0);
  g.dbeta.assign(width, 0.0);
  g.dX = Matrix(batch, width);
  std::vector<Real> sum_dxhat(width, 0.0), sum_dxhat_xhat(width, 0.0);
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t d = 0; d < width; ++d) {
      Real dy = upstream(i, d);
      g.dgamma[d] += dy * cache.xhat(i, d);
      g.dbeta[d] += dy;
      Real dxhat = dy * bn.gamma[d];
      sum_dxhat[d] += dxhat;
      sum_dxhat_xhat[d] += dxhat * cache.xhat(i, d);
    }
  Real invb = 1.0 / static_cast<Real>(batch);
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t d = 0; d < width; ++d) {
      Real dxhat = upstream(i, d) * bn.gamma[d];
      g.dX(i, d) = cache.inv_std[d] *
                   (dxhat - invb * sum_dxhat[d] - invb * cache.xhat(i, d) * sum_dxhat_xhat[d]);
    }
  return g;
}

// ---------------------------------------------------------------------------
// Initialization

struct InitPolicy {
  enum class Kind { Gaussian, Uniform, Zeros } kind = Kind::Zeros;
  Real param = 0.0;  // stddev for Gaussian, symmetric bound for Uniform

  static InitPolicy gaussian(Real stddev) { return {Kind::Gaussian, stddev}; }
  static InitPolicy uniform(Real bound) { return {Kind::Uniform, bound}; }
  static InitPolicy zeros() { return {Kind::Zeros, 0.0}; }
};

inline void init_fill(std::span<Real> out, const InitPolicy& policy, Rng& rng) {
  switch (policy.kind) {
    case InitPolicy::Kind::Gaussian: {
      std::normal_distribution<Real> d(0.0, policy.param);
      for (Real& v : out) v = d(rng);
      break;
    }
    case InitPolicy::Kind::Uniform: {
      std::uniform_real_distribution<Real> d(-policy.param, policy.param);
      for (Real& v : out) v = d(rng);
      break;
    }
    case InitPolicy::Kind::Zeros:
      for (Real& v : out) v = 0.0;
      break;
  }
}

// Glorot-style symmetric bound for hidden layers.
inline Real glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<Real>(fan_in + fan_out));
}

}  // namespace fnfm
