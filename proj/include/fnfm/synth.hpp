#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fnfm/common.hpp"
#include "fnfm/data.hpp"
#include "fnfm/interactions.hpp"
#include "fnfm/metrics.hpp"
#include "fnfm/model.hpp"
#include "fnfm/schema.hpp"

namespace fnfm {

// Desk-scale stand-in for a CTR log: a hidden field-aware model
// z = w0 + sum_i w_i + sum_{i<j} <v_{i,f_j}, v_{j,f_i}> draws the labels,
// y ~ Bernoulli(sigmoid(z / noise)). Per-field embedding scales are spread
// log-normally so pair dimensions have very different magnitudes — the
// regime where input normalization earns its keep.
struct SyntheticSpec {
  std::size_t num_fields = 6;
  std::uint64_t cardinality = 50;  // categories per field
  std::size_t d_true = 4;
  Real noise = 1.0;  // logit divisor; 0 makes labels deterministic y = 1[z > 0]
  Real embed_scale = 0.5;
  Real field_scale_spread = 0.6;  // stddev of per-field log-scales
  Real linear_scale = 0.3;
  std::uint64_t seed = 1;
  std::size_t n_train = 50000;
  std::size_t n_val = 10000;
  std::size_t n_test = 10000;

  void validate() const {
    if (num_fields < 2) throw ConfigError("synthetic data needs at least 2 fields");
    if (cardinality < 2) throw ConfigError("cardinality must be >= 2");
    if (d_true < 1) throw ConfigError("d_true must be >= 1");
    if (noise < 0.0) throw ConfigError("noise must be >= 0");
    if (n_train == 0 || n_val == 0) throw ConfigError("train and val must be nonempty");
  }
};

struct SyntheticGroundTruth {
  LinearPart linear;
  FieldAwareEmbeddings embeddings;
  std::vector<Real> field_scales;
};

struct SyntheticData {
  Dataset train, val, test;
  // Bernoulli probability each label was drawn from, per row
  std::vector<Real> train_probs, val_probs, test_probs;
  // empirical logloss of the generator's own probabilities — the floor a
  // trained model can approach on each split
  Real bayes_train = 0.0, bayes_val = 0.0, bayes_test = 0.0;
  SyntheticGroundTruth truth;
};

namespace detail {

inline std::uint64_t bounded_draw(Rng& rng, std::uint64_t bound) {
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(rng()) * bound) >> 64);
}

inline void fill_synthetic_split(Dataset& out, std::vector<Real>& probs,
                                 const SyntheticSpec& spec,
                                 const SyntheticGroundTruth& truth, std::size_t n,
                                 Rng& rng) {
  const FieldSchema& schema = out.schema();
  EncodedExample ex;
  ex.slots.resize(spec.num_fields);
  probs.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < spec.num_fields; ++k) {
      std::uint64_t cat = bounded_draw(rng, spec.cardinality);
      ex.slots[k] = {static_cast<std::uint32_t>(schema.fields[k].index_base + cat), 1.0};
    }
    Real z = linear_term(truth.linear, ex.slots) + ffm_pairwise(truth.embeddings, ex.slots);
    Real p = spec.noise > 0.0 ? sigmoid(z / spec.noise) : (z > 0.0 ? 1.0 : 0.0);
    ex.label = unit_real(rng) < p ? 1 : 0;
    out.push_back(ex);
    probs.push_back(p);
  }
}

}  // namespace detail

inline SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, std::uint64_t>> fields;
  for (std::size_t k = 0; k < spec.num_fields; ++k)
    fields.emplace_back("f" + std::to_string(k), spec.cardinality);
  FieldSchema schema = make_schema(fields);

  SyntheticData d;
  d.truth.embeddings =
      make_field_aware_embeddings(schema.feature_count, spec.num_fields, spec.d_true);
  d.truth.linear.w0 = 0.0;
  d.truth.linear.w.assign(schema.feature_count, 0.0);

  Rng prng(mix_seed(spec.seed, 0x5939A17ULL));
  std::normal_distribution<Real> unit_normal(0.0, 1.0);
  d.truth.field_scales.resize(spec.num_fields);
  for (std::size_t k = 0; k < spec.num_fields; ++k)
    d.truth.field_scales[k] = std::exp(spec.field_scale_spread * unit_normal(prng));
  for (Real& w : d.truth.linear.w) w = spec.linear_scale * unit_normal(prng);
  for (std::size_t i = 0; i < schema.feature_count; ++i) {
    Real s = spec.embed_scale * d.truth.field_scales[schema.field_of_feature(i)];
    for (std::size_t j = 0; j < spec.num_fields; ++j) {
      auto row = d.truth.embeddings.row(i, j);
      for (Real& v : row) v = s * unit_normal(prng);
    }
  }

  d.train = Dataset(schema, "synthetic", "train");
  d.val = Dataset(schema, "synthetic", "val");
  d.test = Dataset(schema, "synthetic", "test");
  Rng train_rng(mix_seed(spec.seed, 0x7E571ULL));
  Rng val_rng(mix_seed(spec.seed, 0x7E572ULL));
  Rng test_rng(mix_seed(spec.seed, 0x7E573ULL));
  detail::fill_synthetic_split(d.train, d.train_probs, spec, d.truth, spec.n_train,
                               train_rng);
  detail::fill_synthetic_split(d.val, d.val_probs, spec, d.truth, spec.n_val, val_rng);
  if (spec.n_test > 0)
    detail::fill_synthetic_split(d.test, d.test_probs, spec, d.truth, spec.n_test,
                                 test_rng);

  d.bayes_train = logloss(d.train_probs, d.train.labels());
  d.bayes_val = logloss(d.val_probs, d.val.labels());
  if (spec.n_test > 0) d.bayes_test = logloss(d.test_probs, d.test.labels());
  return d;
}

}  // namespace fnfm
