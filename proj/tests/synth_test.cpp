#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fnfm/synth.hpp"
#include "test_util.hpp"

using namespace fnfm;

namespace {

SyntheticSpec small_spec(std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.num_fields = 4;
  s.cardinality = 12;
  s.d_true = 3;
  s.seed = seed;
  s.n_train = 3000;
  s.n_val = 1000;
  s.n_test = 500;
  return s;
}

}  // namespace

TEST(Synth, SchemaAndSplitSizes) {
  SyntheticData d = gen_synthetic(small_spec());
  EXPECT_EQ(d.train.size(), 3000u);
  EXPECT_EQ(d.val.size(), 1000u);
  EXPECT_EQ(d.test.size(), 500u);
  EXPECT_EQ(d.train.schema(), d.val.schema());
  EXPECT_EQ(d.train.schema().field_count(), 4u);
  EXPECT_EQ(d.train.schema().feature_count, 4u * 12u);
  EXPECT_EQ(d.train.schema().fields[0].name, "f0");
  EXPECT_EQ(d.train_probs.size(), d.train.size());
  EXPECT_EQ(d.truth.embeddings.dim, 3u);
  EXPECT_EQ(d.truth.field_scales.size(), 4u);
}

TEST(Synth, DeterministicInSeed) {
  SyntheticData a = gen_synthetic(small_spec(7));
  SyntheticData b = gen_synthetic(small_spec(7));
  EXPECT_EQ(a.train.labels(), b.train.labels());
  EXPECT_EQ(a.val_probs, b.val_probs);
  EXPECT_EQ(a.truth.embeddings, b.truth.embeddings);
  EXPECT_EQ(a.bayes_val, b.bayes_val);
  for (std::size_t i = 0; i < 50; ++i) {
    auto sa = a.train.slots(i);
    auto sb = b.train.slots(i);
    for (std::size_t t = 0; t < sa.size(); ++t) EXPECT_EQ(sa[t], sb[t]);
  }

  SyntheticData c = gen_synthetic(small_spec(8));
  EXPECT_FALSE(a.train.labels() == c.train.labels());
  EXPECT_FALSE(a.truth.embeddings == c.truth.embeddings);
}

TEST(Synth, StoredProbsMatchGroundTruthModel) {
  SyntheticSpec spec = small_spec(3);
  SyntheticData d = gen_synthetic(spec);
  for (std::size_t i = 0; i < 200; ++i) {
    auto slots = d.val.slots(i);
    Real z = detail::linear_term(d.truth.linear, slots) +
             ffm_pairwise(d.truth.embeddings, slots);
    EXPECT_NEAR(d.val_probs[i], sigmoid(z / spec.noise), 1e-12);
  }
}

TEST(Synth, PrevalenceTracksProbabilities) {
  SyntheticData d = gen_synthetic(small_spec(5));
  Real sum_p = 0.0, var_sum = 0.0;
  for (Real p : d.train_probs) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    sum_p += p;
    var_sum += p * (1.0 - p);
  }
  Real n = static_cast<Real>(d.train.size());
  Real sigma = std::sqrt(var_sum) / n;
  EXPECT_NEAR(static_cast<Real>(d.train.positives()) / n, sum_p / n, 5 * sigma);
}

TEST(Synth, ZeroNoiseMakesLabelsDeterministic) {
  SyntheticSpec spec = small_spec(9);
  spec.noise = 0.0;
  SyntheticData d = gen_synthetic(spec);
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    Real p = d.train_probs[i];
    EXPECT_TRUE(p == 0.0 || p == 1.0);
    EXPECT_EQ(d.train.label(i), p == 1.0 ? 1 : 0);
  }
  EXPECT_LT(d.bayes_train, 1e-9);  // generator knows the labels exactly
}

TEST(Synth, BayesFloorIsTheGeneratorLogloss) {
  SyntheticData d = gen_synthetic(small_spec(11));
  EXPECT_DOUBLE_EQ(d.bayes_val, logloss(d.val_probs, d.val.labels()));
  EXPECT_GT(d.bayes_val, 0.0);
  EXPECT_LT(d.bayes_val, std::log(2.0));  // informative features
}

TEST(Synth, FieldScaleSpreadControlsHeterogeneity) {
  SyntheticSpec flat = small_spec(13);
  flat.field_scale_spread = 0.0;
  SyntheticData d = gen_synthetic(flat);
  for (Real s : d.truth.field_scales) EXPECT_DOUBLE_EQ(s, 1.0);

  SyntheticSpec wide = small_spec(13);
  wide.field_scale_spread = 1.0;
  SyntheticData w = gen_synthetic(wide);
  std::set<Real> distinct(w.truth.field_scales.begin(), w.truth.field_scales.end());
  EXPECT_EQ(distinct.size(), w.truth.field_scales.size());
  for (Real s : w.truth.field_scales) EXPECT_GT(s, 0.0);
}

TEST(Synth, SpecValidation) {
  SyntheticSpec s = small_spec();
  s.num_fields = 1;
  EXPECT_THROW(gen_synthetic(s), ConfigError);
  s = small_spec();
  s.cardinality = 1;
  EXPECT_THROW(gen_synthetic(s), ConfigError);
  s = small_spec();
  s.noise = -0.5;
  EXPECT_THROW(gen_synthetic(s), ConfigError);
  s = small_spec();
  s.n_val = 0;
  EXPECT_THROW(gen_synthetic(s), ConfigError);
}
