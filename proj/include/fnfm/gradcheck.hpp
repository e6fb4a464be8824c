#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fnfm/common.hpp"

namespace fnfm {

struct GradCheckBlock {
  std::string name;
  std::span<Real> values;        // live parameter storage, perturbed in place
  std::vector<Real> analytic;    // gradient to verify, same length
};

struct GradCheckReport {
  struct BlockResult {
    std::string name;
    Real max_rel_error = 0.0;
    std::size_t worst_index = 0;
    Real analytic_at_worst = 0.0;
    Real numeric_at_worst = 0.0;
  };
  std::vector<BlockResult> blocks;
  bool nonfinite_loss = false;
  std::string failure_location;

  Real max_rel_error() const {
    Real m = 0.0;
    for (const auto& b : blocks) m = std::max(m, b.max_rel_error);
    return m;
  }
  bool passed(Real tolerance) const {
    return !nonfinite_loss && max_rel_error() < tolerance;
  }
};

// Central-difference check of analytic gradients against a deterministic
// scalar loss. Relative error per coordinate is
// |a - n| / max(|a|, |n|, 1e-6). The 1e-6 floor is what float64 central
// differences can support: an O(1) loss carries ~eps*L/(2h) ~ 5e-12 of
// rounding noise in the difference quotient, so coordinates whose true
// gradient is exactly zero (they do occur: a label-balanced batch zeroes
// dL/dw0) would fail any tighter floor on noise alone.
inline GradCheckReport grad_check(const std::function<Real()>& loss,
                                  std::vector<GradCheckBlock> blocks,
                                  Real step = 1e-5) {
  GradCheckReport report;
  for (auto& block : blocks) {
    GradCheckReport::BlockResult res;
    res.name = block.name;
    for (std::size_t i = 0; i < block.values.size(); ++i) {
      Real saved = block.values[i];
      block.values[i] = saved + step;
      Real up = loss();
      block.values[i] = saved - step;
      Real down = loss();
      block.values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        report.nonfinite_loss = true;
        report.failure_location = block.name + "[" + std::to_string(i) + "]";
        report.blocks.push_back(res);
        return report;
      }
      Real numeric = (up - down) / (2.0 * step);
      Real analytic = block.analytic[i];
      Real denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
      Real rel = std::fabs(analytic - numeric) / denom;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_index = i;
        res.analytic_at_worst = analytic;
        res.numeric_at_worst = numeric;
      }
    }
    report.blocks.push_back(res);
  }
  return report;
}

}  // namespace fnfm
