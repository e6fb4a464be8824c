#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fnfm/common.hpp"
#include "fnfm/data.hpp"
#include "fnfm/gradcheck.hpp"
#include "fnfm/model.hpp"

namespace fnfm {

// Finite-difference check of the full model gradient on one batch. Every
// parameter block is verified, including BN gamma/beta. The loss closure
// runs BN in training mode without advancing running statistics, so
// repeated evaluations are identical. When L2 is active the closure adds
// the matching penalty over exactly the rows the batch touched, mirroring
// the lazy regularization in backward().
inline GradCheckReport model_grad_check(ModelParams& params, const ModelSpec& spec,
                                        const Dataset& data,
                                        std::span<const std::size_t> batch,
                                        const Regularization& reg = {},
                                        Real step = 1e-5) {
  std::vector<std::uint8_t> labels(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = data.label(batch[i]);

  ForwardCtx ctx;
  auto logits = forward_train(params, spec, data, batch, ctx, /*update_running=*/false);
  LossResult ref = nll_loss(logits, labels);
  ModelGrads grads = backward(params, spec, data, ctx, ref.dlogits, reg);

  // touched rows are a function of the batch's slots alone, so the sets
  // stay valid while parameters are perturbed
  std::vector<std::uint64_t> touched_w = grads.touched_w;
  std::vector<std::uint64_t> touched_plain = grads.touched_plain;
  std::vector<std::uint64_t> touched_field = grads.touched_field;

  auto loss_fn = [&]() -> Real {
    ForwardCtx c;
    auto z = forward_train(params, spec, data, batch, c, /*update_running=*/false);
    Real loss = nll_loss(z, labels).loss;
    if (reg.l2_linear != 0.0)
      for (std::uint64_t i : touched_w)
        loss += 0.5 * reg.l2_linear * params.linear.w[i] * params.linear.w[i];
    if (reg.l2_embedding != 0.0) {
      if (params.plain) {
        std::size_t dim = params.plain->dim;
        for (std::uint64_t r : touched_plain)
          for (std::size_t d = 0; d < dim; ++d) {
            Real v = params.plain->table[r * dim + d];
            loss += 0.5 * reg.l2_embedding * v * v;
          }
      }
      if (params.field) {
        std::size_t dim = params.field->dim;
        for (std::uint64_t r : touched_field)
          for (std::size_t d = 0; d < dim; ++d) {
            Real v = params.field->table[r * dim + d];
            loss += 0.5 * reg.l2_embedding * v * v;
          }
      }
    }
    return loss;
  };

  std::vector<GradCheckBlock> blocks;
  blocks.push_back({"w0", std::span<Real>{&params.linear.w0, 1}, {grads.dw0}});
  blocks.push_back({"w", params.linear.w, grads.dw});
  if (params.plain) blocks.push_back({"plain_emb", params.plain->table, grads.dplain});
  if (params.field) blocks.push_back({"field_emb", params.field->table, grads.dfield});
  for (std::size_t k = 0; k < params.mlp.size(); ++k) {
    std::string base = k + 1 == params.mlp.size() ? "head" : "mlp" + std::to_string(k);
    blocks.push_back({base + ".W", params.mlp[k].W.data(), grads.mlp_dW[k].data()});
    blocks.push_back({base + ".b", params.mlp[k].b, grads.mlp_db[k]});
  }
  if (params.bn) {
    blocks.push_back({"bn.gamma", params.bn->gamma, grads.dgamma});
    blocks.push_back({"bn.beta", params.bn->beta, grads.dbeta});
  }
  return grad_check(loss_fn, std::move(blocks), step);
}

}  // namespace fnfm
