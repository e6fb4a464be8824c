#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fnfm/common.hpp"
#include "fnfm/data.hpp"

namespace fnfm {

// One latent vector per global feature.
struct PlainEmbeddings {
  std::uint64_t feature_count = 0;
  std::size_t dim = 0;
  std::vector<Real> table;  // [n x D] row-major

  std::span<Real> row(std::uint64_t feature) {
    return {table.data() + feature * dim, dim};
  }
  std::span<const Real> row(std::uint64_t feature) const {
    return {table.data() + feature * dim, dim};
  }

  bool operator==(const PlainEmbeddings&) const = default;
};

inline PlainEmbeddings make_plain_embeddings(std::uint64_t n, std::size_t dim) {
  return {n, dim, std::vector<Real>(n * dim, 0.0)};
}

// Per feature, one latent vector toward every target field. Rows for a
// feature's own field are allocated to keep indexing regular but are never
// read by the pairwise sums.
struct FieldAwareEmbeddings {
  std::uint64_t feature_count = 0;
  std::size_t num_fields = 0;
  std::size_t dim = 0;
  std::vector<Real> table;  // [n x f x D] row-major

  std::uint64_t row_id(std::uint64_t feature, std::size_t target_field) const {
    return feature * num_fields + target_field;
  }
  std::span<Real> row(std::uint64_t feature, std::size_t target_field) {
    return {table.data() + row_id(feature, target_field) * dim, dim};
  }
  std::span<const Real> row(std::uint64_t feature, std::size_t target_field) const {
    return {table.data() + row_id(feature, target_field) * dim, dim};
  }

  bool operator==(const FieldAwareEmbeddings&) const = default;
};

inline FieldAwareEmbeddings make_field_aware_embeddings(std::uint64_t n,
                                                        std::size_t num_fields,
                                                        std::size_t dim) {
  return {n, num_fields, dim, std::vector<Real>(n * num_fields * dim, 0.0)};
}

// Canonical pair order: (0,1),(0,2),...,(f-2,f-1). Persisted models record
// this enumeration; every concatenation layout depends on it.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> canonical_pairs(
    std::size_t num_fields) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  pairs.reserve(num_fields * (num_fields - 1) / 2);
  for (std::uint32_t i = 0; i < num_fields; ++i)
    for (std::uint32_t j = i + 1; j < num_fields; ++j) pairs.emplace_back(i, j);
  return pairs;
}

inline std::size_t num_pairs(std::size_t num_fields) {
  return num_fields * (num_fields - 1) / 2;
}

// ---------------------------------------------------------------------------
// FM second-order term (plain embeddings)

// Sum over field pairs of <x_i v_i, x_j v_j>, via the quadratic identity
// 0.5 * sum_d [(sum_i e_id)^2 - sum_i e_id^2] with e_i = x_i v_i.
inline Real fm_pairwise(const PlainEmbeddings& emb, std::span<const Slot> slots) {
  std::size_t dim = emb.dim;
  Real total = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    Real s = 0.0, sq = 0.0;
    for (const Slot& slot : slots) {
      Real e = slot.value * emb.row(slot.index)[d];
      s += e;
      sq += e * e;
    }
    total += 0.5 * (s * s - sq);
  }
  return total;
}

// Direct double loop over active slots; kept as the second route for the
// identity above.
inline Real fm_pairwise_double_loop(const PlainEmbeddings& emb,
                                    std::span<const Slot> slots) {
  Real total = 0.0;
  for (std::size_t i = 0; i < slots.size(); ++i)
    for (std::size_t j = i + 1; j < slots.size(); ++j)
      total += slots[i].value * slots[j].value *
               dot(emb.row(slots[i].index), emb.row(slots[j].index));
  return total;
}

// d(total)/dv_i = x_i * (S - e_i) * upstream, where S = sum_j e_j. Touched
// row ids are appended for the sparse-update bookkeeping. Optional
// dslot_values receives d(total)/dx_i.
inline void fm_pairwise_backward(const PlainEmbeddings& emb, std::span<const Slot> slots,
                                 Real upstream, std::span<Real> grad_table,
                                 std::vector<std::uint64_t>& touched_rows,
                                 std::span<Real> dslot_values = {}) {
  std::size_t dim = emb.dim;
  std::vector<Real> sum(dim, 0.0);
  for (const Slot& slot : slots)
    axpy(slot.value, emb.row(slot.index), sum);
  for (std::size_t t = 0; t < slots.size(); ++t) {
    const Slot& slot = slots[t];
    auto v = emb.row(slot.index);
    std::span<Real> g{grad_table.data() + slot.index * dim, dim};
    Real dx = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      Real residual = sum[d] - slot.value * v[d];
      g[d] += upstream * slot.value * residual;
      dx += v[d] * residual;
    }
    if (!dslot_values.empty()) dslot_values[t] += upstream * dx;
    touched_rows.push_back(slot.index);
  }
}

// ---------------------------------------------------------------------------
// Bi-interaction pooling (plain embeddings)

// sum_{i<j} (x_i v_i) (.) (x_j v_j), one D-vector.
inline std::vector<Real> bi_interaction_pool(const PlainEmbeddings& emb,
                                             std::span<const Slot> slots) {
  std::size_t dim = emb.dim;
  std::vector<Real> out(dim, 0.0);
  std::vector<Real> sum(dim, 0.0), sumsq(dim, 0.0);
  for (const Slot& slot : slots) {
    auto v = emb.row(slot.index);
    for (std::size_t d = 0; d < dim; ++d) {
      Real e = slot.value * v[d];
      sum[d] += e;
      sumsq[d] += e * e;
    }
  }
  for (std::size_t d = 0; d < dim; ++d) out[d] = 0.5 * (sum[d] * sum[d] - sumsq[d]);
  return out;
}

inline void bi_interaction_pool_backward(const PlainEmbeddings& emb,
                                         std::span<const Slot> slots,
                                         std::span<const Real> upstream,
                                         std::span<Real> grad_table,
                                         std::vector<std::uint64_t>& touched_rows,
                                         std::span<Real> dslot_values = {}) {
  std::size_t dim = emb.dim;
  std::vector<Real> sum(dim, 0.0);
  for (const Slot& slot : slots)
    axpy(slot.value, emb.row(slot.index), sum);
  for (std::size_t t = 0; t < slots.size(); ++t) {
    const Slot& slot = slots[t];
    auto v = emb.row(slot.index);
    std::span<Real> g{grad_table.data() + slot.index * dim, dim};
    Real dx = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      Real residual = sum[d] - slot.value * v[d];
      g[d] += upstream[d] * slot.value * residual;
      dx += upstream[d] * v[d] * residual;
    }
    if (!dslot_values.empty()) dslot_values[t] += dx;
    touched_rows.push_back(slot.index);
  }
}

// ---------------------------------------------------------------------------
// Field-aware pairwise term

// sum_{i<j} <v_{i,f_j}, v_{j,f_i}> x_i x_j. Slot position is the field, so
// the lookup for slot i toward slot j's field is row(feature_i, j).
inline Real ffm_pairwise(const FieldAwareEmbeddings& emb, std::span<const Slot> slots) {
  Real total = 0.0;
  for (std::size_t i = 0; i < slots.size(); ++i)
    for (std::size_t j = i + 1; j < slots.size(); ++j)
      total += slots[i].value * slots[j].value *
               dot(emb.row(slots[i].index, j), emb.row(slots[j].index, i));
  return total;
}

inline void ffm_pairwise_backward(const FieldAwareEmbeddings& emb,
                                  std::span<const Slot> slots, Real upstream,
                                  std::span<Real> grad_table,
                                  std::vector<std::uint64_t>& touched_rows,
                                  std::span<Real> dslot_values = {}) {
  std::size_t dim = emb.dim;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    for (std::size_t j = i + 1; j < slots.size(); ++j) {
      auto vi = emb.row(slots[i].index, j);
      auto vj = emb.row(slots[j].index, i);
      std::uint64_t ri = emb.row_id(slots[i].index, j);
      std::uint64_t rj = emb.row_id(slots[j].index, i);
      std::span<Real> gi{grad_table.data() + ri * dim, dim};
      std::span<Real> gj{grad_table.data() + rj * dim, dim};
      Real xx = slots[i].value * slots[j].value;
      Real ip = dot(vi, vj);
      for (std::size_t d = 0; d < dim; ++d) {
        gi[d] += upstream * xx * vj[d];
        gj[d] += upstream * xx * vi[d];
      }
      if (!dslot_values.empty()) {
        dslot_values[i] += upstream * slots[j].value * ip;
        dslot_values[j] += upstream * slots[i].value * ip;
      }
      touched_rows.push_back(ri);
      touched_rows.push_back(rj);
    }
  }
}

// ---------------------------------------------------------------------------
// Bi-interaction concatenation (field-aware embeddings)

// Segment (i,j) of the output is a_{i,j} = x_i v_{i,f_j} (.) x_j v_{j,f_i},
// pairs in canonical order; total width f(f-1)/2 * D.
inline std::vector<Real> bi_interaction_concat(const FieldAwareEmbeddings& emb,
                                               std::span<const Slot> slots) {
  if (slots.size() < 2) throw SchemaError("bi_interaction_concat needs >= 2 fields");
  std::size_t dim = emb.dim;
  std::vector<Real> out(num_pairs(slots.size()) * dim);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    for (std::size_t j = i + 1; j < slots.size(); ++j, ++seg) {
      auto vi = emb.row(slots[i].index, j);
      auto vj = emb.row(slots[j].index, i);
      Real xx = slots[i].value * slots[j].value;
      Real* a = out.data() + seg * dim;
      for (std::size_t d = 0; d < dim; ++d) a[d] = xx * vi[d] * vj[d];
    }
  }
  return out;
}

inline void bi_interaction_concat_backward(const FieldAwareEmbeddings& emb,
                                           std::span<const Slot> slots,
                                           std::span<const Real> upstream,
                                           std::span<Real> grad_table,
                                           std::vector<std::uint64_t>& touched_rows,
                                           std::span<Real> dslot_values = {}) {
  std::size_t dim = emb.dim;
  std::size_t seg = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    for (std::size_t j = i + 1; j < slots.size(); ++j, ++seg) {
      auto vi = emb.row(slots[i].index, j);
      auto vj = emb.row(slots[j].index, i);
      std::uint64_t ri = emb.row_id(slots[i].index, j);
      std::uint64_t rj = emb.row_id(slots[j].index, i);
      std::span<Real> gi{grad_table.data() + ri * dim, dim};
      std::span<Real> gj{grad_table.data() + rj * dim, dim};
      Real xx = slots[i].value * slots[j].value;
      const Real* up = upstream.data() + seg * dim;
      Real dseg = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        gi[d] += up[d] * xx * vj[d];
        gj[d] += up[d] * xx * vi[d];
        dseg += up[d] * vi[d] * vj[d];
      }
      if (!dslot_values.empty()) {
        dslot_values[i] += dseg * slots[j].value;
        dslot_values[j] += dseg * slots[i].value;
      }
      touched_rows.push_back(ri);
      touched_rows.push_back(rj);
    }
  }
}

// Segment-sum of the concatenation: the D-wide field-aware pooled variant.
inline std::vector<Real> bi_interaction_concat_pooled(const FieldAwareEmbeddings& emb,
                                                      std::span<const Slot> slots) {
  std::size_t dim = emb.dim;
  std::vector<Real> out(dim, 0.0);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    for (std::size_t j = i + 1; j < slots.size(); ++j) {
      auto vi = emb.row(slots[i].index, j);
      auto vj = emb.row(slots[j].index, i);
      Real xx = slots[i].value * slots[j].value;
      for (std::size_t d = 0; d < dim; ++d) out[d] += xx * vi[d] * vj[d];
    }
  }
  return out;
}

inline void bi_interaction_concat_pooled_backward(
    const FieldAwareEmbeddings& emb, std::span<const Slot> slots,
    std::span<const Real> upstream, std::span<Real> grad_table,
    std::vector<std::uint64_t>& touched_rows, std::span<Real> dslot_values = {}) {
  std::size_t dim = emb.dim;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    for (std::size_t j = i + 1; j < slots.size(); ++j) {
      auto vi = emb.row(slots[i].index, j);
      auto vj = emb.row(slots[j].index, i);
      std::uint64_t ri = emb.row_id(slots[i].index, j);
      std::uint64_t rj = emb.row_id(slots[j].index, i);
      std::span<Real> gi{grad_table.data() + ri * dim, dim};
      std::span<Real> gj{grad_table.data() + rj * dim, dim};
      Real xx = slots[i].value * slots[j].value;
      Real dseg = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        gi[d] += upstream[d] * xx * vj[d];
        gj[d] += upstream[d] * xx * vi[d];
        dseg += upstream[d] * vi[d] * vj[d];
      }
      if (!dslot_values.empty()) {
        dslot_values[i] += dseg * slots[j].value;
        dslot_values[j] += dseg * slots[i].value;
      }
      touched_rows.push_back(ri);
      touched_rows.push_back(rj);
    }
  }
}

}  // namespace fnfm
