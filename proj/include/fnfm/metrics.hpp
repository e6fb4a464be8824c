#pragma once

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fnfm/common.hpp"

namespace fnfm {

// Mean binary cross-entropy with predictions clamped to [1e-15, 1 - 1e-15]
// so degenerate models still get a finite score.
inline Real logloss(std::span<const Real> predictions, std::span<const std::uint8_t> labels) {
  if (predictions.size() != labels.size())
    throw ShapeError("predictions/labels length mismatch");
  if (predictions.empty()) throw MetricError("logloss of empty input");
  constexpr Real kClamp = 1e-15;
  Real sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    Real p = std::clamp(predictions[i], kClamp, 1.0 - kClamp);
    sum -= labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return sum / static_cast<Real>(predictions.size());
}

// Probability that a random positive outranks a random negative, ties
// credited 0.5 — the Mann-Whitney statistic via midranks, O(m log m).
inline Real auc(std::span<const Real> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("scores/labels length mismatch");
  std::size_t n_pos = 0;
  for (std::uint8_t y : labels) n_pos += y;
  std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw MetricError("auc undefined: needs at least one positive and one negative");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  Real rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // 1-based ranks i+1 .. j share the midrank
    Real midrank = static_cast<Real>(i + 1 + j) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum_pos += midrank;
    i = j;
  }
  Real u = rank_sum_pos - static_cast<Real>(n_pos) * (static_cast<Real>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<Real>(n_pos) * static_cast<Real>(n_neg));
}

struct MetricsReport {
  std::string model;
  std::string split;
  Real logloss = 0.0;
  Real auc = 0.0;
  bool auc_defined = false;
  std::size_t n = 0;
  std::size_t n_pos = 0;

  std::size_t n_neg() const { return n - n_pos; }
};

inline MetricsReport evaluate(std::span<const Real> predictions,
                              std::span<const std::uint8_t> labels, std::string model = "",
                              std::string split = "") {
  MetricsReport r;
  r.model = std::move(model);
  r.split = std::move(split);
  r.n = labels.size();
  for (std::uint8_t y : labels) r.n_pos += y;
  r.logloss = logloss(predictions, labels);
  if (r.n_pos > 0 && r.n_pos < r.n) {
    r.auc = auc(predictions, labels);
    r.auc_defined = true;
  }
  return r;
}

namespace detail {
// Shortest round-trip formatting keeps reports bit-identical across runs.
inline std::string json_real(Real v) {
  if (!std::isfinite(v)) return "null";
  return fmt::format("{}", v);
}
}  // namespace detail

inline std::string metrics_json(const MetricsReport& r) {
  return fmt::format(R"({{"model":"{}","split":"{}","logloss":{},"auc":{},"n":{},"n_pos":{}}})",
                     r.model, r.split, detail::json_real(r.logloss),
                     r.auc_defined ? detail::json_real(r.auc) : "null", r.n, r.n_pos);
}

}  // namespace fnfm
