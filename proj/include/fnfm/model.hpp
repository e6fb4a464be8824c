#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fnfm/common.hpp"
#include "fnfm/data.hpp"
#include "fnfm/interactions.hpp"
#include "fnfm/layers.hpp"

namespace fnfm {

enum class ModelKind : std::uint8_t { LR = 0, FM = 1, FFM = 2, NFM = 3, DeepFM = 4, FNFM = 5 };

// FNFM's second-order layer: keep every pair vector (Concat) or sum them
// into one D-vector (Pool). Pool exists to isolate the layer under study in
// the ablation; both use field-aware embeddings.
enum class InteractionMode : std::uint8_t { Concat = 0, Pool = 1 };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::LR: return "lr";
    case ModelKind::FM: return "fm";
    case ModelKind::FFM: return "ffm";
    case ModelKind::NFM: return "nfm";
    case ModelKind::DeepFM: return "deepfm";
    case ModelKind::FNFM: return "fnfm";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  for (ModelKind k : {ModelKind::LR, ModelKind::FM, ModelKind::FFM, ModelKind::NFM,
                      ModelKind::DeepFM, ModelKind::FNFM})
    if (s == model_kind_name(k)) return k;
  throw ConfigError("unknown model kind: " + s);
}

struct ModelSpec {
  ModelKind kind = ModelKind::FNFM;
  std::size_t embedding_dim = 4;
  std::vector<std::size_t> hidden;  // widths of ReLU hidden layers
  bool use_batchnorm = false;       // normalize the MLP input
  InteractionMode interaction = InteractionMode::Concat;

  bool has_mlp() const {
    return kind == ModelKind::NFM || kind == ModelKind::DeepFM || kind == ModelKind::FNFM;
  }
  bool uses_plain_embeddings() const {
    return kind == ModelKind::FM || kind == ModelKind::NFM || kind == ModelKind::DeepFM;
  }
  bool uses_field_embeddings() const {
    return kind == ModelKind::FFM || kind == ModelKind::FNFM;
  }

  std::size_t mlp_input_width(const FieldSchema& schema) const {
    std::size_t f = schema.field_count();
    switch (kind) {
      case ModelKind::NFM: return embedding_dim;
      case ModelKind::DeepFM: return f * embedding_dim;
      case ModelKind::FNFM:
        return interaction == InteractionMode::Concat ? num_pairs(f) * embedding_dim
                                                      : embedding_dim;
      default: return 0;
    }
  }

  void validate(const FieldSchema& schema) const {
    schema.validate();
    if (kind != ModelKind::LR && embedding_dim < 1)
      throw ConfigError("embedding_dim must be >= 1");
    if (has_mlp() && hidden.empty())
      throw ConfigError("hidden layout must be nonempty for " +
                        std::string(model_kind_name(kind)));
    if (interaction == InteractionMode::Pool && kind != ModelKind::FNFM)
      throw ConfigError("pool interaction only applies to fnfm");
  }

  bool operator==(const ModelSpec&) const = default;
};

struct LinearPart {
  Real w0 = 0.0;
  std::vector<Real> w;  // [n]

  bool operator==(const LinearPart&) const = default;
};

// Flat parameter record for one model. Plain value semantics; snapshots are
// copies.
struct ModelParams {
  LinearPart linear;
  std::optional<PlainEmbeddings> plain;
  std::optional<FieldAwareEmbeddings> field;
  std::vector<DenseLayer> mlp;  // hidden layers then the scalar head
  std::optional<BatchNormLayer> bn;

  bool operator==(const ModelParams&) const = default;
};

// Initialization: embeddings Gaussian sigma=0.01, hidden layers Glorot
// uniform, BN gamma=1 beta=0, linear weights and the scalar head zero. The
// zero head makes every freshly initialized model output logit 0 exactly,
// so the pre-training loss is ln 2 regardless of the data.
inline ModelParams init_params(const ModelSpec& spec, const FieldSchema& schema,
                               std::uint64_t seed) {
  ModelParams p;
  std::size_t n = schema.feature_count;
  std::size_t f = schema.field_count();
  p.linear.w.assign(n, 0.0);
  Rng rng(mix_seed(seed, 0xA11CE5EEDULL));
  if (spec.uses_plain_embeddings()) {
    p.plain = make_plain_embeddings(n, spec.embedding_dim);
    init_fill(p.plain->table, InitPolicy::gaussian(0.01), rng);
  }
  if (spec.uses_field_embeddings()) {
    p.field = make_field_aware_embeddings(n, f, spec.embedding_dim);
    init_fill(p.field->table, InitPolicy::gaussian(0.01), rng);
  }
  if (spec.has_mlp()) {
    std::size_t in = spec.mlp_input_width(schema);
    for (std::size_t width : spec.hidden) {
      DenseLayer layer;
      layer.W = Matrix(width, in);
      layer.b.assign(width, 0.0);
      init_fill(layer.W.data(), InitPolicy::uniform(glorot_bound(in, width)), rng);
      p.mlp.push_back(std::move(layer));
      in = width;
    }
    DenseLayer head;
    head.W = Matrix(1, in);
    head.b.assign(1, 0.0);
    p.mlp.push_back(std::move(head));
    if (spec.use_batchnorm) p.bn = make_batchnorm(spec.mlp_input_width(schema));
  }
  return p;
}

struct ParamCount {
  std::vector<std::pair<std::string, std::size_t>> blocks;
  std::size_t total = 0;

  std::size_t block(const std::string& name) const {
    for (const auto& [k, v] : blocks)
      if (k == name) return v;
    return 0;
  }
};

inline ParamCount param_count(const ModelSpec& spec, const FieldSchema& schema) {
  ParamCount c;
  std::size_t n = schema.feature_count;
  std::size_t f = schema.field_count();
  auto add = [&](const std::string& name, std::size_t count) {
    c.blocks.emplace_back(name, count);
    c.total += count;
  };
  add("w0", 1);
  add("w", n);
  if (spec.uses_plain_embeddings()) add("plain_emb", n * spec.embedding_dim);
  if (spec.uses_field_embeddings()) add("field_emb", n * f * spec.embedding_dim);
  if (spec.has_mlp()) {
    std::size_t in = spec.mlp_input_width(schema);
    for (std::size_t k = 0; k < spec.hidden.size(); ++k) {
      add("mlp" + std::to_string(k) + ".W", spec.hidden[k] * in);
      add("mlp" + std::to_string(k) + ".b", spec.hidden[k]);
      in = spec.hidden[k];
    }
    add("head.W", in);
    add("head.b", 1);
    if (spec.use_batchnorm) {
      add("bn.gamma", spec.mlp_input_width(schema));
      add("bn.beta", spec.mlp_input_width(schema));
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Forward

struct ForwardCtx {
  std::vector<std::size_t> batch;
  Matrix interaction;  // MLP input before BN
  BatchNormCache bn_cache;
  std::vector<DenseCache> dense_caches;
  std::vector<Matrix> pre;  // hidden pre-activations
  std::vector<Matrix> act;  // act[0] = MLP input after BN, act[k+1] = relu(pre[k])
  std::vector<Real> fm_term;
  std::vector<Real> logits;
  bool valid = false;
};

namespace detail {

inline Real linear_term(const LinearPart& lin, std::span<const Slot> slots) {
  Real z = lin.w0;
  for (const Slot& s : slots) z += lin.w[s.index] * s.value;
  return z;
}

// Per-example MLP input row by model kind.
inline void interaction_row(const ModelParams& p, const ModelSpec& spec,
                            std::span<const Slot> slots, std::span<Real> out) {
  switch (spec.kind) {
    case ModelKind::NFM: {
      auto pooled = bi_interaction_pool(*p.plain, slots);
      std::copy(pooled.begin(), pooled.end(), out.begin());
      break;
    }
    case ModelKind::DeepFM: {
      std::size_t dim = p.plain->dim;
      for (std::size_t t = 0; t < slots.size(); ++t) {
        auto v = p.plain->row(slots[t].index);
        for (std::size_t d = 0; d < dim; ++d) out[t * dim + d] = slots[t].value * v[d];
      }
      break;
    }
    case ModelKind::FNFM: {
      auto vec = spec.interaction == InteractionMode::Concat
                     ? bi_interaction_concat(*p.field, slots)
                     : bi_interaction_concat_pooled(*p.field, slots);
      std::copy(vec.begin(), vec.end(), out.begin());
      break;
    }
    default: throw StateError("interaction_row on non-MLP kind");
  }
}

}  // namespace detail

// Training forward over a batch of dataset rows. Caches everything backward
// needs in `ctx`. BN runs in training mode on the batch statistics.
inline std::vector<Real> forward_train(ModelParams& params, const ModelSpec& spec,
                                       const Dataset& data,
                                       std::span<const std::size_t> batch,
                                       ForwardCtx& ctx, bool update_running = true) {
  if (batch.empty()) throw ConfigError("empty batch");
  std::size_t b = batch.size();
  ctx.batch.assign(batch.begin(), batch.end());
  ctx.fm_term.assign(b, 0.0);
  ctx.logits.assign(b, 0.0);

  for (std::size_t i = 0; i < b; ++i)
    ctx.logits[i] = detail::linear_term(params.linear, data.slots(batch[i]));

  if (spec.kind == ModelKind::FM || spec.kind == ModelKind::DeepFM) {
    for (std::size_t i = 0; i < b; ++i) {
      ctx.fm_term[i] = fm_pairwise(*params.plain, data.slots(batch[i]));
      ctx.logits[i] += ctx.fm_term[i];
    }
  } else if (spec.kind == ModelKind::FFM) {
    for (std::size_t i = 0; i < b; ++i)
      ctx.logits[i] += ffm_pairwise(*params.field, data.slots(batch[i]));
  }

  if (spec.has_mlp()) {
    std::size_t width = spec.mlp_input_width(data.schema());
    ctx.interaction = Matrix(b, width);
    for (std::size_t i = 0; i < b; ++i)
      detail::interaction_row(params, spec, data.slots(batch[i]), ctx.interaction.row(i));

    ctx.act.clear();
    ctx.pre.clear();
    ctx.dense_caches.assign(params.mlp.size(), {});
    if (params.bn) {
      ctx.act.push_back(batchnorm_forward_train(*params.bn, ctx.interaction, ctx.bn_cache,
                                                update_running));
    } else {
      ctx.act.push_back(ctx.interaction);
    }
    std::size_t n_hidden = params.mlp.size() - 1;
    for (std::size_t k = 0; k < n_hidden; ++k) {
      ctx.pre.push_back(dense_forward(params.mlp[k], ctx.act[k], &ctx.dense_caches[k]));
      ctx.act.push_back(relu(ctx.pre[k]));
    }
    Matrix head = dense_forward(params.mlp[n_hidden], ctx.act[n_hidden],
                                &ctx.dense_caches[n_hidden]);
    for (std::size_t i = 0; i < b; ++i) ctx.logits[i] += head(i, 0);
  }
  ctx.valid = true;
  return ctx.logits;
}

// Inference forward: no caches, no mutation; BN uses running statistics.
// Safe for concurrent use on a frozen model.
inline std::vector<Real> predict_logits(const ModelParams& params, const ModelSpec& spec,
                                        const Dataset& data,
                                        std::span<const std::size_t> batch) {
  std::size_t b = batch.size();
  std::vector<Real> logits(b, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    logits[i] = detail::linear_term(params.linear, data.slots(batch[i]));
  if (spec.kind == ModelKind::FM || spec.kind == ModelKind::DeepFM) {
    for (std::size_t i = 0; i < b; ++i)
      logits[i] += fm_pairwise(*params.plain, data.slots(batch[i]));
  } else if (spec.kind == ModelKind::FFM) {
    for (std::size_t i = 0; i < b; ++i)
      logits[i] += ffm_pairwise(*params.field, data.slots(batch[i]));
  }
  if (spec.has_mlp()) {
    std::size_t width = spec.mlp_input_width(data.schema());
    Matrix x(b, width);
    for (std::size_t i = 0; i < b; ++i)
      detail::interaction_row(params, spec, data.slots(batch[i]), x.row(i));
    if (params.bn) x = batchnorm_forward_infer(*params.bn, x);
    std::size_t n_hidden = params.mlp.size() - 1;
    for (std::size_t k = 0; k < n_hidden; ++k) x = relu(dense_forward(params.mlp[k], x));
    Matrix head = dense_forward(params.mlp[n_hidden], x);
    for (std::size_t i = 0; i < b; ++i) logits[i] += head(i, 0);
  }
  return logits;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

inline std::vector<Real> predict_probabilities(const ModelParams& params,
                                               const ModelSpec& spec, const Dataset& data,
                                               std::span<const std::size_t> batch) {
  std::vector<Real> z = predict_logits(params, spec, data, batch);
  for (Real& v : z) v = sigmoid(v);
  return z;
}

// ---------------------------------------------------------------------------
// Loss

struct LossResult {
  Real loss = 0.0;
  std::vector<Real> dlogits;  // (p - y) / N
};

// Mean negative log-likelihood evaluated in logit space:
// loss_i = softplus(z_i) - y_i z_i, which never takes log of 0.
inline LossResult nll_loss(std::span<const Real> logits,
                           std::span<const std::uint8_t> labels) {
  if (logits.empty()) throw ConfigError("nll_loss on empty batch");
  if (logits.size() != labels.size()) throw ShapeError("logits/labels length mismatch");
  LossResult r;
  r.dlogits.resize(logits.size());
  Real inv_n = 1.0 / static_cast<Real>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Real z = logits[i];
    Real y = static_cast<Real>(labels[i]);
    r.loss += softplus(z) - y * z;
    r.dlogits[i] = (sigmoid(z) - y) * inv_n;
  }
  r.loss *= inv_n;
  return r;
}

// ---------------------------------------------------------------------------
// Backward

struct Regularization {
  Real l2_linear = 0.0;     // adds l2 * w to the touched linear gradient rows
  Real l2_embedding = 0.0;  // adds l2 * v to the touched embedding rows
  bool full_decay = false;  // decay every row instead of only touched ones
};

struct ModelGrads {
  Real dw0 = 0.0;
  std::vector<Real> dw;
  std::vector<std::uint64_t> touched_w;
  std::vector<Real> dplain;
  std::vector<std::uint64_t> touched_plain;
  std::vector<Real> dfield;
  std::vector<std::uint64_t> touched_field;
  std::vector<Matrix> mlp_dW;
  std::vector<std::vector<Real>> mlp_db;
  std::vector<Real> dgamma, dbeta;
};

namespace detail {
inline void sort_unique(std::vector<std::uint64_t>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}
}  // namespace detail

// Full gradient of the batch loss (upstream dlogits) including lazy L2 on
// the rows the batch touched. Consumes the forward cache.
inline ModelGrads backward(ModelParams& params, const ModelSpec& spec, const Dataset& data,
                           ForwardCtx& ctx, std::span<const Real> dlogits,
                           const Regularization& reg = {}) {
  if (!ctx.valid) throw StateError("backward without matching forward");
  if (dlogits.size() != ctx.batch.size()) throw ShapeError("dlogits length mismatch");
  std::size_t b = ctx.batch.size();
  std::size_t n = params.linear.w.size();

  ModelGrads g;
  g.dw.assign(n, 0.0);
  if (params.plain) g.dplain.assign(params.plain->table.size(), 0.0);
  if (params.field) g.dfield.assign(params.field->table.size(), 0.0);

  // linear part
  for (std::size_t i = 0; i < b; ++i) {
    Real dz = dlogits[i];
    g.dw0 += dz;
    for (const Slot& s : data.slots(ctx.batch[i])) {
      g.dw[s.index] += dz * s.value;
      g.touched_w.push_back(s.index);
    }
  }

  // FM scalar term (FM and DeepFM)
  if (spec.kind == ModelKind::FM || spec.kind == ModelKind::DeepFM) {
    for (std::size_t i = 0; i < b; ++i)
      fm_pairwise_backward(*params.plain, data.slots(ctx.batch[i]), dlogits[i], g.dplain,
                           g.touched_plain);
  } else if (spec.kind == ModelKind::FFM) {
    for (std::size_t i = 0; i < b; ++i)
      ffm_pairwise_backward(*params.field, data.slots(ctx.batch[i]), dlogits[i], g.dfield,
                            g.touched_field);
  }

  if (spec.has_mlp()) {
    std::size_t n_hidden = params.mlp.size() - 1;
    Matrix d(b, 1);
    for (std::size_t i = 0; i < b; ++i) d(i, 0) = dlogits[i];

    g.mlp_dW.resize(params.mlp.size());
    g.mlp_db.resize(params.mlp.size());
    for (std::size_t k = params.mlp.size(); k-- > 0;) {
      DenseGrads dg = dense_backward(params.mlp[k], ctx.dense_caches[k], d);
      g.mlp_dW[k] = std::move(dg.dW);
      g.mlp_db[k] = std::move(dg.db);
      d = std::move(dg.dX);
      if (k > 0) d = relu_backward(d, ctx.pre[k - 1]);
    }

    if (params.bn) {
      BatchNormGrads bg = batchnorm_backward(*params.bn, ctx.bn_cache, d);
      g.dgamma = std::move(bg.dgamma);
      g.dbeta = std::move(bg.dbeta);
      d = std::move(bg.dX);
    }

    // route the MLP-input gradient into the embedding tables
    for (std::size_t i = 0; i < b; ++i) {
      auto slots = data.slots(ctx.batch[i]);
      auto up = d.row(i);
      switch (spec.kind) {
        case ModelKind::NFM:
          bi_interaction_pool_backward(*params.plain, slots, up, g.dplain,
                                       g.touched_plain);
          break;
        case ModelKind::DeepFM: {
          std::size_t dim = params.plain->dim;
          for (std::size_t t = 0; t < slots.size(); ++t) {
            std::span<Real> row{g.dplain.data() + slots[t].index * dim, dim};
            for (std::size_t dd = 0; dd < dim; ++dd)
              row[dd] += up[t * dim + dd] * slots[t].value;
            g.touched_plain.push_back(slots[t].index);
          }
          break;
        }
        case ModelKind::FNFM:
          if (spec.interaction == InteractionMode::Concat)
            bi_interaction_concat_backward(*params.field, slots, up, g.dfield,
                                           g.touched_field);
          else
            bi_interaction_concat_pooled_backward(*params.field, slots, up, g.dfield,
                                                  g.touched_field);
          break;
        default: break;
      }
    }
  }

  detail::sort_unique(g.touched_w);
  detail::sort_unique(g.touched_plain);
  detail::sort_unique(g.touched_field);

  // L2, lazily on touched rows (or everything under full decay)
  if (reg.l2_linear != 0.0) {
    if (reg.full_decay) {
      g.touched_w.resize(n);
      for (std::size_t i = 0; i < n; ++i) g.touched_w[i] = i;
    }
    for (std::uint64_t i : g.touched_w) g.dw[i] += reg.l2_linear * params.linear.w[i];
  }
  if (reg.l2_embedding != 0.0) {
    if (params.plain) {
      if (reg.full_decay) {
        g.touched_plain.resize(params.plain->feature_count);
        for (std::uint64_t i = 0; i < params.plain->feature_count; ++i)
          g.touched_plain[i] = i;
      }
      std::size_t dim = params.plain->dim;
      for (std::uint64_t r : g.touched_plain)
        for (std::size_t dd = 0; dd < dim; ++dd)
          g.dplain[r * dim + dd] += reg.l2_embedding * params.plain->table[r * dim + dd];
    }
    if (params.field) {
      if (reg.full_decay) {
        std::size_t rows = params.field->feature_count * params.field->num_fields;
        g.touched_field.resize(rows);
        for (std::uint64_t i = 0; i < rows; ++i) g.touched_field[i] = i;
      }
      std::size_t dim = params.field->dim;
      for (std::uint64_t r : g.touched_field)
        for (std::size_t dd = 0; dd < dim; ++dd)
          g.dfield[r * dim + dd] += reg.l2_embedding * params.field->table[r * dim + dd];
    }
  }

  ctx.valid = false;  // one backward per forward
  return g;
}

}  // namespace fnfm
