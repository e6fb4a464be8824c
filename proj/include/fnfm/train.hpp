#pragma once

#include <cmath>
#include <cstdint>
#include <fmt/format.h>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fnfm/common.hpp"
#include "fnfm/data.hpp"
#include "fnfm/metrics.hpp"
#include "fnfm/model.hpp"
#include "fnfm/optim.hpp"

namespace fnfm {

struct TrainConfig {
  ModelSpec model;
  OptimConfig optimizer;
  std::size_t epochs = 20;
  std::size_t patience = 3;  // consecutive non-improving evals tolerated
  std::size_t batch_size = 4096;
  std::size_t eval_every = 1;
  Real l2_linear = 0.0;
  Real l2_embedding = 1e-5;
  std::uint64_t seed = 1;
  std::size_t probe_size = 1024;  // fixed diagnostic batch drawn from val
  std::string profile;

  void validate(const FieldSchema& schema) const {
    model.validate(schema);
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (l2_linear < 0.0 || l2_embedding < 0.0) throw ConfigError("l2 must be >= 0");
    if (optimizer.lr <= 0.0) throw ConfigError("learning rate must be > 0");
  }
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  Real train_loss = 0.0;
  bool evaluated = false;
  Real val_logloss = 0.0;
  Real val_auc = 0.0;
  bool val_auc_defined = false;
  // per-dimension sample std of the MLP input on the probe batch, before
  // and after normalization; identical when the model has no BN, empty for
  // models without an MLP
  std::vector<Real> pre_bn_std, post_bn_std;

  bool operator==(const EpochStats&) const = default;
};

struct TrainReport {
  std::string model_name;
  std::string profile;
  std::uint64_t seed = 0;
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  Real best_val_logloss = std::numeric_limits<Real>::infinity();
  Real final_train_loss = 0.0;
  bool has_test = false;
  Real test_logloss = 0.0;
  Real test_auc = 0.0;
  bool test_auc_defined = false;

  bool operator==(const TrainReport&) const = default;
};

struct TrainResult {
  TrainReport report;
  ModelSpec spec;
  ModelParams params;  // parameters from the best-validation epoch
};

namespace detail {

inline Real l2_norm(std::span<const Real> v) {
  Real s = 0.0;
  for (Real x : v) s += x * x;
  return std::sqrt(s);
}

inline std::string block_norms(const ModelParams& p) {
  std::ostringstream os;
  os << "w0=" << p.linear.w0 << " |w|=" << l2_norm(p.linear.w);
  if (p.plain) os << " |plain|=" << l2_norm(p.plain->table);
  if (p.field) os << " |field|=" << l2_norm(p.field->table);
  for (std::size_t k = 0; k < p.mlp.size(); ++k)
    os << " |mlp" << k << "|=" << l2_norm(p.mlp[k].W.data());
  if (p.bn) os << " |gamma|=" << l2_norm(p.bn->gamma);
  return os.str();
}

// Per-dimension sample std of the MLP input on a fixed probe batch. The
// post-normalization view is what the first dense layer actually sees; BN
// runs in training mode on the probe without touching running statistics.
inline void probe_mlp_input_stats(ModelParams& params, const ModelSpec& spec,
                                  const Dataset& data,
                                  std::span<const std::size_t> probe,
                                  std::vector<Real>& pre_std,
                                  std::vector<Real>& post_std) {
  std::size_t width = spec.mlp_input_width(data.schema());
  Matrix x(probe.size(), width);
  for (std::size_t i = 0; i < probe.size(); ++i)
    interaction_row(params, spec, data.slots(probe[i]), x.row(i));

  auto column_std = [](const Matrix& m, std::vector<Real>& out) {
    out.assign(m.cols(), 0.0);
    for (std::size_t d = 0; d < m.cols(); ++d) {
      Real mean = 0.0;
      for (std::size_t i = 0; i < m.rows(); ++i) mean += m(i, d);
      mean /= static_cast<Real>(m.rows());
      Real ss = 0.0;
      for (std::size_t i = 0; i < m.rows(); ++i) {
        Real c = m(i, d) - mean;
        ss += c * c;
      }
      out[d] = std::sqrt(ss / static_cast<Real>(m.rows() - 1));
    }
  };
  column_std(x, pre_std);
  if (params.bn) {
    BatchNormCache cache;
    Matrix y = batchnorm_forward_train(*params.bn, x, cache, /*update_running=*/false);
    column_std(y, post_std);
  } else {
    post_std = pre_std;
  }
}

// max/min of the per-dimension std the MLP actually receives.
inline Real spread_ratio(std::span<const Real> stds) {
  Real lo = std::numeric_limits<Real>::infinity(), hi = 0.0;
  for (Real s : stds) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  if (stds.empty() || hi == 0.0) return 1.0;
  return hi / std::max(lo, 1e-300);
}

}  // namespace detail

inline Real mlp_input_spread_ratio(const EpochStats& e) {
  return detail::spread_ratio(e.post_bn_std);
}

// Epoch loop with seeded shuffling, per-epoch validation, best-checkpoint
// retention, and early stopping once validation logloss has failed to
// improve for more than `patience` consecutive evaluations.
inline TrainResult train(const TrainConfig& cfg, const Dataset& train_data,
                         const Dataset& val_data, const Dataset* test_data = nullptr) {
  cfg.validate(train_data.schema());
  if (train_data.empty() || val_data.empty())
    throw ConfigError("train and val datasets must be nonempty");
  if (!(val_data.schema() == train_data.schema()))
    throw SchemaError("train/val schema mismatch");
  if (test_data && !(test_data->schema() == train_data.schema()))
    throw SchemaError("train/test schema mismatch");

  ModelParams params = init_params(cfg.model, train_data.schema(), cfg.seed);
  Optimizer opt(cfg.optimizer, params);
  Regularization reg{cfg.l2_linear, cfg.l2_embedding, false};

  // fixed probe rows for the input-distribution diagnostics
  std::vector<std::size_t> probe;
  if (cfg.model.has_mlp()) {
    std::size_t want = std::min(cfg.probe_size, val_data.size());
    MinibatchIter probe_iter(val_data.size(), want, mix_seed(cfg.seed, 0x9A0BEULL), 0);
    auto first = probe_iter.next();
    probe.assign(first->begin(), first->end());
  }

  TrainReport report;
  report.model_name = model_kind_name(cfg.model.kind);
  report.profile = cfg.profile;
  report.seed = cfg.seed;

  ModelParams best_params = params;
  std::size_t since_best = 0;
  ForwardCtx ctx;
  std::vector<std::uint8_t> batch_labels;
  auto val_idx = all_indices(val_data.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    MinibatchIter batches(train_data.size(), cfg.batch_size, cfg.seed, epoch);
    Real loss_sum = 0.0;
    std::size_t seen = 0, batch_no = 0;
    while (auto batch = batches.next()) {
      ++batch_no;
      auto logits = forward_train(params, cfg.model, train_data, *batch, ctx);
      // Catch divergence at the logit, not the loss: the probability clamp
      // inside the loss keeps it finite even when the model has blown up,
      // and a blown-up network can sit at astronomically large yet finite
      // logits (dead relus pass the inflated bias straight through). The
      // loss saturates near |z|=35, so anything past the sentinel carries
      // no probabilistic meaning.
      constexpr Real kDivergentLogit = 1e30;
      for (Real z : logits)
        if (!std::isfinite(z) || std::fabs(z) > kDivergentLogit)
          throw NumericError(fmt::format(
              "divergent logit at epoch {} batch {}; {}", epoch, batch_no,
              detail::block_norms(params)));
      batch_labels.resize(batch->size());
      for (std::size_t i = 0; i < batch->size(); ++i)
        batch_labels[i] = train_data.label((*batch)[i]);
      LossResult loss = nll_loss(logits, batch_labels);
      if (!std::isfinite(loss.loss))
        throw NumericError(fmt::format(
            "non-finite training loss at epoch {} batch {}; {}", epoch, batch_no,
            detail::block_norms(params)));
      try {
        ModelGrads grads = backward(params, cfg.model, train_data, ctx, loss.dlogits, reg);
        opt.step(params, grads);
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("{} (epoch {} batch {}; {})", e.what(), epoch,
                                       batch_no, detail::block_norms(params)));
      }
      loss_sum += loss.loss * static_cast<Real>(batch->size());
      seen += batch->size();
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<Real>(seen);
    if (cfg.model.has_mlp())
      detail::probe_mlp_input_stats(params, cfg.model, val_data, probe, stats.pre_bn_std,
                                    stats.post_bn_std);

    bool stop = false;
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      auto probs = predict_probabilities(params, cfg.model, val_data, val_idx);
      MetricsReport m = evaluate(probs, val_data.labels());
      stats.evaluated = true;
      stats.val_logloss = m.logloss;
      stats.val_auc = m.auc;
      stats.val_auc_defined = m.auc_defined;
      if (m.logloss < report.best_val_logloss) {
        report.best_val_logloss = m.logloss;
        report.best_epoch = epoch;
        best_params = params;
        since_best = 0;
      } else {
        ++since_best;
        if (since_best > cfg.patience) stop = true;
      }
    }
    report.final_train_loss = stats.train_loss;
    report.epochs.push_back(std::move(stats));
    if (stop) break;
  }

  if (test_data && !test_data->empty()) {
    auto probs = predict_probabilities(best_params, cfg.model, *test_data,
                                       all_indices(test_data->size()));
    MetricsReport m = evaluate(probs, test_data->labels());
    report.has_test = true;
    report.test_logloss = m.logloss;
    report.test_auc = m.auc;
    report.test_auc_defined = m.auc_defined;
  }

  return {std::move(report), cfg.model, std::move(best_params)};
}

// ---------------------------------------------------------------------------
// Report serialization (JSON lines, one epoch per line plus a summary line)

namespace detail {

inline std::string json_real_array(std::span<const Real> v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += json_real(v[i]);
  }
  return out + "]";
}

}  // namespace detail

inline std::string train_report_jsonl(const TrainReport& r) {
  std::string out;
  for (const EpochStats& e : r.epochs) {
    out += fmt::format(
        R"({{"type":"epoch","model":"{}","profile":"{}","seed":{},"epoch":{},"train_loss":{})",
        r.model_name, r.profile, r.seed, e.epoch, detail::json_real(e.train_loss));
    if (e.evaluated) {
      out += fmt::format(R"(,"val_logloss":{},"val_auc":{})",
                         detail::json_real(e.val_logloss),
                         e.val_auc_defined ? detail::json_real(e.val_auc) : "null");
    }
    if (!e.pre_bn_std.empty()) {
      out += fmt::format(R"(,"pre_bn_std":{},"post_bn_std":{})",
                         detail::json_real_array(e.pre_bn_std),
                         detail::json_real_array(e.post_bn_std));
    }
    out += "}\n";
  }
  out += fmt::format(
      R"({{"type":"summary","model":"{}","profile":"{}","seed":{},"best_epoch":{},"best_val_logloss":{},"final_train_loss":{})",
      r.model_name, r.profile, r.seed, r.best_epoch,
      detail::json_real(r.best_val_logloss), detail::json_real(r.final_train_loss));
  if (r.has_test)
    out += fmt::format(R"(,"test_logloss":{},"test_auc":{})",
                       detail::json_real(r.test_logloss),
                       r.test_auc_defined ? detail::json_real(r.test_auc) : "null");
  out += "}\n";
  return out;
}

// ---------------------------------------------------------------------------
// Paired studies

struct ConcatPoolAblation {
  TrainResult concat;
  TrainResult pool;
};

// Same seeds, data, optimizer; the only difference is whether the pairwise
// product vectors are concatenated or summed before the MLP.
inline ConcatPoolAblation ablate_interaction_layer(TrainConfig base,
                                                   const Dataset& train_data,
                                                   const Dataset& val_data,
                                                   const Dataset* test_data = nullptr) {
  if (base.model.kind != ModelKind::FNFM)
    throw ConfigError("interaction ablation requires an fnfm model spec");
  TrainConfig concat_cfg = base, pool_cfg = base;
  concat_cfg.model.interaction = InteractionMode::Concat;
  pool_cfg.model.interaction = InteractionMode::Pool;
  return {train(concat_cfg, train_data, val_data, test_data),
          train(pool_cfg, train_data, val_data, test_data)};
}

struct BatchNormAblation {
  TrainResult with_bn;
  TrainResult without_bn;
};

inline BatchNormAblation ablate_batchnorm(TrainConfig base, const Dataset& train_data,
                                          const Dataset& val_data,
                                          const Dataset* test_data = nullptr) {
  if (base.model.kind != ModelKind::FNFM)
    throw ConfigError("batchnorm ablation requires an fnfm model spec");
  TrainConfig with_cfg = base, without_cfg = base;
  with_cfg.model.use_batchnorm = true;
  without_cfg.model.use_batchnorm = false;
  return {train(with_cfg, train_data, val_data, test_data),
          train(without_cfg, train_data, val_data, test_data)};
}

// ---------------------------------------------------------------------------
// Grid-search comparison

struct GridConfig {
  std::vector<ModelKind> kinds = {ModelKind::LR,     ModelKind::FM,
                                  ModelKind::FFM,    ModelKind::NFM,
                                  ModelKind::DeepFM, ModelKind::FNFM};
  std::vector<std::size_t> plain_dims = {4, 8, 16, 32, 64};
  std::vector<std::size_t> field_dims = {4};  // field-aware dims stay small
  std::vector<std::vector<std::size_t>> hidden_layouts = {
      {128, 128}, {128, 128, 128}, {256, 256}, {256, 256, 256}};
  bool use_batchnorm = true;
  OptimConfig fm_ffm_optimizer{OptimizerKind::AdaGrad, 0.1};
  OptimConfig default_optimizer{OptimizerKind::Adam, 0.0001};
};

struct LeaderboardRow {
  ModelKind kind = ModelKind::LR;
  ModelSpec spec;
  OptimConfig optimizer;
  Real val_logloss = std::numeric_limits<Real>::infinity();
  std::size_t best_epoch = 0;
  bool has_test = false;
  Real test_logloss = 0.0;
  Real test_auc = 0.0;
  bool test_auc_defined = false;
};

namespace detail {

inline std::vector<ModelSpec> grid_cells(ModelKind kind, const GridConfig& grid) {
  std::vector<ModelSpec> cells;
  auto push = [&](std::size_t dim, std::vector<std::size_t> hidden) {
    ModelSpec s;
    s.kind = kind;
    s.embedding_dim = dim;
    s.hidden = std::move(hidden);
    s.use_batchnorm = !s.hidden.empty() && grid.use_batchnorm;
    cells.push_back(std::move(s));
  };
  switch (kind) {
    case ModelKind::LR: push(1, {}); break;
    case ModelKind::FM:
      for (std::size_t d : grid.plain_dims) push(d, {});
      break;
    case ModelKind::FFM:
      for (std::size_t d : grid.field_dims) push(d, {});
      break;
    case ModelKind::NFM:
    case ModelKind::DeepFM:
      for (std::size_t d : grid.plain_dims)
        for (const auto& h : grid.hidden_layouts) push(d, h);
      break;
    case ModelKind::FNFM:
      for (std::size_t d : grid.field_dims)
        for (const auto& h : grid.hidden_layouts) push(d, h);
      break;
  }
  return cells;
}

}  // namespace detail

// Trains every grid cell and keeps, per model kind, the cell with the best
// validation logloss. Test metrics are reported for the winning cell only.
inline std::vector<LeaderboardRow> compare_models(const GridConfig& grid,
                                                  const TrainConfig& base,
                                                  const Dataset& train_data,
                                                  const Dataset& val_data,
                                                  const Dataset* test_data = nullptr) {
  std::vector<LeaderboardRow> board;
  for (ModelKind kind : grid.kinds) {
    LeaderboardRow best;
    best.kind = kind;
    for (const ModelSpec& cell : detail::grid_cells(kind, grid)) {
      TrainConfig cfg = base;
      cfg.model = cell;
      cfg.optimizer = (kind == ModelKind::FM || kind == ModelKind::FFM)
                          ? grid.fm_ffm_optimizer
                          : grid.default_optimizer;
      TrainResult r = train(cfg, train_data, val_data, test_data);
      if (r.report.best_val_logloss < best.val_logloss) {
        best.spec = cell;
        best.optimizer = cfg.optimizer;
        best.val_logloss = r.report.best_val_logloss;
        best.best_epoch = r.report.best_epoch;
        best.has_test = r.report.has_test;
        best.test_logloss = r.report.test_logloss;
        best.test_auc = r.report.test_auc;
        best.test_auc_defined = r.report.test_auc_defined;
      }
    }
    board.push_back(std::move(best));
  }
  return board;
}

inline std::string leaderboard_json(const std::vector<LeaderboardRow>& board) {
  std::string out = R"({"leaderboard":[)";
  for (std::size_t i = 0; i < board.size(); ++i) {
    const LeaderboardRow& r = board[i];
    if (i) out += ",";
    std::string hidden = "[";
    for (std::size_t k = 0; k < r.spec.hidden.size(); ++k) {
      if (k) hidden += ",";
      hidden += std::to_string(r.spec.hidden[k]);
    }
    hidden += "]";
    out += fmt::format(
        R"({{"model":"{}","embedding_dim":{},"hidden":{},"batchnorm":{},"optimizer":"{}","lr":{},"val_logloss":{},"best_epoch":{})",
        model_kind_name(r.kind), r.spec.embedding_dim, hidden,
        r.spec.use_batchnorm ? "true" : "false", optimizer_kind_name(r.optimizer.kind),
        detail::json_real(r.optimizer.lr), detail::json_real(r.val_logloss),
        r.best_epoch);
    if (r.has_test)
      out += fmt::format(R"(,"test_logloss":{},"test_auc":{})",
                         detail::json_real(r.test_logloss),
                         r.test_auc_defined ? detail::json_real(r.test_auc) : "null");
    out += "}";
  }
  return out + "]}";
}

}  // namespace fnfm
