#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fnfm/common.hpp"
#include "fnfm/model.hpp"

namespace fnfm {

enum class OptimizerKind : std::uint8_t { Adam = 0, AdaGrad = 1 };

inline const char* optimizer_kind_name(OptimizerKind k) {
  return k == OptimizerKind::Adam ? "adam" : "adagrad";
}

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "adagrad") return OptimizerKind::AdaGrad;
  throw ConfigError("unknown optimizer kind: " + s);
}

struct OptimConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  Real lr = 0.001;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;

  bool operator==(const OptimConfig&) const = default;
};

// Moment buffers shaped like the parameters they track. Adam uses both m
// and v; AdaGrad uses only m as the squared-gradient accumulator G.
class Optimizer {
 public:
  Optimizer(OptimConfig cfg, const ModelParams& params) : cfg_(cfg) {
    m_w_.assign(params.linear.w.size(), 0.0);
    v_w_.assign(params.linear.w.size(), 0.0);
    if (params.plain) {
      m_plain_.assign(params.plain->table.size(), 0.0);
      v_plain_.assign(params.plain->table.size(), 0.0);
    }
    if (params.field) {
      m_field_.assign(params.field->table.size(), 0.0);
      v_field_.assign(params.field->table.size(), 0.0);
    }
    for (const DenseLayer& layer : params.mlp) {
      m_W_.emplace_back(layer.W.rows(), layer.W.cols());
      v_W_.emplace_back(layer.W.rows(), layer.W.cols());
      m_b_.emplace_back(layer.b.size(), 0.0);
      v_b_.emplace_back(layer.b.size(), 0.0);
    }
    if (params.bn) {
      m_gamma_.assign(params.bn->gamma.size(), 0.0);
      v_gamma_.assign(params.bn->gamma.size(), 0.0);
      m_beta_.assign(params.bn->beta.size(), 0.0);
      v_beta_.assign(params.bn->beta.size(), 0.0);
    }
  }

  std::uint64_t step_count() const { return t_; }
  const OptimConfig& config() const { return cfg_; }

  // One optimizer step. Checks the whole gradient for non-finite values
  // before touching anything, so a failed step leaves params intact.
  void step(ModelParams& params, const ModelGrads& g) {
    check_shapes(params, g);
    check_finite(g);
    ++t_;

    update_one(params.linear.w0, m_w0_, v_w0_, g.dw0);
    for (std::uint64_t i : g.touched_w)
      update_one(params.linear.w[i], m_w_[i], v_w_[i], g.dw[i]);
    if (params.plain)
      update_rows(params.plain->table, m_plain_, v_plain_, g.dplain, g.touched_plain,
                  params.plain->dim);
    if (params.field)
      update_rows(params.field->table, m_field_, v_field_, g.dfield, g.touched_field,
                  params.field->dim);
    for (std::size_t k = 0; k < params.mlp.size(); ++k) {
      update_dense(params.mlp[k].W.data(), m_W_[k].data(), v_W_[k].data(),
                   g.mlp_dW[k].data());
      update_dense(params.mlp[k].b, m_b_[k], v_b_[k], g.mlp_db[k]);
    }
    if (params.bn) {
      update_dense(params.bn->gamma, m_gamma_, v_gamma_, g.dgamma);
      update_dense(params.bn->beta, m_beta_, v_beta_, g.dbeta);
    }
  }

 private:
  void check_shapes(const ModelParams& p, const ModelGrads& g) const {
    if (g.dw.size() != p.linear.w.size()) throw ShapeError("dw shape mismatch");
    if (p.plain && g.dplain.size() != p.plain->table.size())
      throw ShapeError("dplain shape mismatch");
    if (p.field && g.dfield.size() != p.field->table.size())
      throw ShapeError("dfield shape mismatch");
    if (g.mlp_dW.size() != p.mlp.size() || g.mlp_db.size() != p.mlp.size())
      throw ShapeError("mlp gradient count mismatch");
    for (std::size_t k = 0; k < p.mlp.size(); ++k)
      if (g.mlp_dW[k].rows() != p.mlp[k].W.rows() ||
          g.mlp_dW[k].cols() != p.mlp[k].W.cols() ||
          g.mlp_db[k].size() != p.mlp[k].b.size())
        throw ShapeError("mlp layer gradient shape mismatch");
    if (p.bn && (g.dgamma.size() != p.bn->gamma.size() ||
                 g.dbeta.size() != p.bn->beta.size()))
      throw ShapeError("bn gradient shape mismatch");
  }

  void check_finite(const ModelGrads& g) const {
    auto bad = [](std::span<const Real> x) { return !all_finite(x); };
    if (!std::isfinite(g.dw0) || bad(g.dw) || bad(g.dplain) || bad(g.dfield) ||
        bad(g.dgamma) || bad(g.dbeta))
      throw NumericError("non-finite gradient; step aborted");
    for (const Matrix& m : g.mlp_dW)
      if (bad(m.data())) throw NumericError("non-finite gradient; step aborted");
    for (const auto& b : g.mlp_db)
      if (bad(b)) throw NumericError("non-finite gradient; step aborted");
  }

  void update_one(Real& theta, Real& m, Real& v, Real grad) {
    if (cfg_.kind == OptimizerKind::Adam) {
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad * grad;
      Real mhat = m / (1.0 - std::pow(cfg_.beta1, static_cast<Real>(t_)));
      Real vhat = v / (1.0 - std::pow(cfg_.beta2, static_cast<Real>(t_)));
      theta -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    } else {
      m += grad * grad;
      theta -= cfg_.lr * grad / std::sqrt(m + cfg_.eps);
    }
  }

  void update_dense(std::span<Real> theta, std::span<Real> m, std::span<Real> v,
                    std::span<const Real> grad) {
    for (std::size_t i = 0; i < theta.size(); ++i) update_one(theta[i], m[i], v[i], grad[i]);
  }

  // Lazy sparse update: only rows the batch touched get their moments
  // advanced; untouched rows keep stale moments undecayed.
  void update_rows(std::span<Real> table, std::span<Real> m, std::span<Real> v,
                   std::span<const Real> grad, std::span<const std::uint64_t> rows,
                   std::size_t dim) {
    for (std::uint64_t r : rows)
      for (std::size_t d = 0; d < dim; ++d) {
        std::size_t i = r * dim + d;
        update_one(table[i], m[i], v[i], grad[i]);
      }
  }

  OptimConfig cfg_;
  std::uint64_t t_ = 0;
  Real m_w0_ = 0.0, v_w0_ = 0.0;
  std::vector<Real> m_w_, v_w_;
  std::vector<Real> m_plain_, v_plain_, m_field_, v_field_;
  std::vector<Matrix> m_W_, v_W_;
  std::vector<std::vector<Real>> m_b_, v_b_;
  std::vector<Real> m_gamma_, v_gamma_, m_beta_, v_beta_;
};

// Seeded epoch permutation chunked into batches; the final batch may be
// short. Same (seed, epoch) always yields the same sequence.
class MinibatchIter {
 public:
  MinibatchIter(std::size_t n, std::size_t batch_size, std::uint64_t shuffle_seed,
                std::uint64_t epoch)
      : batch_(batch_size) {
    if (n == 0) throw ConfigError("minibatch iteration over empty dataset");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    perm_.resize(n);
    for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
    Rng rng(shuffle_seed ^ epoch);
    // Fisher-Yates with a pinned bounded draw so the order is stable
    // across standard libraries.
    for (std::size_t i = n - 1; i > 0; --i) {
      auto j = static_cast<std::size_t>(
          (static_cast<unsigned __int128>(rng()) * (i + 1)) >> 64);
      std::swap(perm_[i], perm_[j]);
    }
  }

  std::optional<std::span<const std::size_t>> next() {
    if (pos_ >= perm_.size()) return std::nullopt;
    std::size_t take = std::min(batch_, perm_.size() - pos_);
    std::span<const std::size_t> out{perm_.data() + pos_, take};
    pos_ += take;
    return out;
  }

  std::size_t batch_count() const { return (perm_.size() + batch_ - 1) / batch_; }

 private:
  std::vector<std::size_t> perm_;
  std::size_t pos_ = 0;
  std::size_t batch_;
};

}  // namespace fnfm
