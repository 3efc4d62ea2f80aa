#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "memefuse/hard_mining.hpp"
#include "memefuse/matrix.hpp"
#include "memefuse/mlp_head.hpp"

namespace memefuse {

/// Per-batch loss values, reported separately for logging and tests.
struct LossBreakdown {
  double l_ce = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l_hm = 0.0;
  double l_total = 0.0;
  std::size_t n_hard = 0;
  std::size_t n_skipped = 0;
};

struct BatchObjective {
  LossBreakdown loss;
  HeadParameters grads;
  MiningAssignment assignment;  // empty when mining did not run
};

/// L_total = L_ce + alpha * L_HM on one batch, with exact parameter gradients.
///
/// Mining runs when n >= 1 and the batch holds at least two samples, one of
/// them hard. With alpha == 0 the mining terms are still reported but no
/// gradient is injected.
inline BatchObjective evaluate_objective(const HeadParameters& params, const Matrix& features,
                                         std::span<const std::uint8_t> labels,
                                         const std::vector<bool>& hard_mask, const MiningConfig& mining) {
  validate_mining(mining);
  BatchObjective out;
  const auto trace = forward(params, features);
  const auto ce = cross_entropy(trace.logits, labels);
  out.loss.l_ce = ce.loss;

  Matrix injected;
  const bool any_hard = std::find(hard_mask.begin(), hard_mask.end(), true) != hard_mask.end();
  if (mining.n >= 1 && features.rows() >= 2 && any_hard) {
    out.assignment = find_neighbors(trace.penultimate(), labels, hard_mask, mining.n);
    auto ml = mining_loss(trace.penultimate(), out.assignment, mining);
    out.loss.l1 = ml.l1;
    out.loss.l2 = ml.l2;
    out.loss.l_hm = ml.l_hm;
    out.loss.n_hard = ml.n_hard;
    out.loss.n_skipped = ml.n_skipped;
    if (mining.alpha != 0.0) injected = std::move(ml.grad_penultimate);
  }
  out.loss.l_total = total_loss(out.loss.l_ce, out.loss.l_hm, mining.alpha);
  out.grads = backward(trace, ce.grad_logits, injected, params);
  return out;
}

}  // namespace memefuse
