#pragma once

// Auxiliary loss on hard training samples, computed on penultimate embeddings
// inside one batch.
//
// For every hard sample r with embedding y_r:
//   m1_r = mean of its n nearest non-hard batch members of the same class
//   m2_r = mean of its n nearest batch members of the opposite class
//   L1 = sum_r ||y_r - m1_r||^2,  L2 = sum_r ||y_r - m2_r||^2
//   L_HM = L1 + (1 - L2),  L_total = L_ce + alpha * L_HM
// Distances are squared Euclidean; ties go to the lower batch index.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "memefuse/matrix.hpp"

namespace memefuse {

enum class Reduction { sum, mean };

struct MiningConfig {
  std::size_t n = 1;  // neighbors per pool; 0 disables mining
  double alpha = 0.05;
  bool neighbor_gradients = false;
  Reduction reduction = Reduction::sum;
  bool margin_clamp = false;  // use max(0, 1 - L2) in place of (1 - L2)

  friend bool operator==(const MiningConfig&, const MiningConfig&) = default;
};

inline void validate_mining(const MiningConfig& c) {
  if (!(c.alpha >= 0.0)) throw std::invalid_argument("mining: alpha must be >= 0");
}

struct HardAssignment {
  std::size_t index = 0;                   // batch row of the hard sample
  std::vector<std::size_t> same_class;     // nearest non-hard same-class rows
  std::vector<std::size_t> opposite_class; // nearest opposite-class rows

  [[nodiscard]] bool has_same() const noexcept { return !same_class.empty(); }
  [[nodiscard]] bool has_opposite() const noexcept { return !opposite_class.empty(); }

  friend bool operator==(const HardAssignment&, const HardAssignment&) = default;
};

/// One entry per hard sample, in batch order.
struct MiningAssignment {
  std::vector<HardAssignment> hard;

  [[nodiscard]] std::size_t n_hard() const noexcept { return hard.size(); }

  friend bool operator==(const MiningAssignment&, const MiningAssignment&) = default;
};

namespace detail {

inline std::vector<std::size_t> nearest(std::span<const double> query, const Matrix& points,
                                        std::vector<std::size_t> pool, std::size_t n) {
  std::vector<std::pair<double, std::size_t>> ranked;
  ranked.reserve(pool.size());
  for (std::size_t j : pool) ranked.emplace_back(squared_distance(query, points.row(j)), j);
  const std::size_t take = std::min(n, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end());
  std::vector<std::size_t> out(take);
  for (std::size_t i = 0; i < take; ++i) out[i] = ranked[i].second;
  return out;
}

}  // namespace detail

inline MiningAssignment find_neighbors(const Matrix& penultimate, std::span<const std::uint8_t> labels,
                                       const std::vector<bool>& hard_mask, std::size_t n) {
  const std::size_t batch = penultimate.rows();
  if (labels.size() != batch || hard_mask.size() != batch) {
    throw std::invalid_argument("find_neighbors: labels/hard_mask do not match batch size");
  }
  if (n < 1) throw std::invalid_argument("find_neighbors: n must be >= 1");
  MiningAssignment out;
  std::vector<std::size_t> same, opposite;
  for (std::size_t r = 0; r < batch; ++r) {
    if (!hard_mask[r]) continue;
    same.clear();
    opposite.clear();
    for (std::size_t j = 0; j < batch; ++j) {
      if (j == r) continue;
      if (labels[j] == labels[r]) {
        if (!hard_mask[j]) same.push_back(j);
      } else {
        opposite.push_back(j);
      }
    }
    HardAssignment a;
    a.index = r;
    a.same_class = detail::nearest(penultimate.row(r), penultimate, same, n);
    a.opposite_class = detail::nearest(penultimate.row(r), penultimate, opposite, n);
    out.hard.push_back(std::move(a));
  }
  return out;
}

struct MeanVectors {
  Matrix m1;  // row h belongs to assignment.hard[h]; zero when that pool is empty
  Matrix m2;
};

inline std::vector<double> mean_of_rows(const Matrix& m, std::span<const std::size_t> rows) {
  std::vector<double> out(m.cols(), 0.0);
  if (rows.empty()) return out;
  for (std::size_t j : rows) {
    const auto r = m.row(j);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += r[d];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (double& v : out) v *= inv;
  return out;
}

inline MeanVectors mean_vectors(const MiningAssignment& assignment, const Matrix& penultimate) {
  MeanVectors mv{Matrix(assignment.n_hard(), penultimate.cols()),
                 Matrix(assignment.n_hard(), penultimate.cols())};
  for (std::size_t h = 0; h < assignment.n_hard(); ++h) {
    const auto& a = assignment.hard[h];
    const auto m1 = mean_of_rows(penultimate, a.same_class);
    const auto m2 = mean_of_rows(penultimate, a.opposite_class);
    std::copy(m1.begin(), m1.end(), mv.m1.row(h).begin());
    std::copy(m2.begin(), m2.end(), mv.m2.row(h).begin());
  }
  return mv;
}

struct MiningLoss {
  double l1 = 0.0;
  double l2 = 0.0;
  double l_hm = 0.0;
  Matrix grad_penultimate;  // d(alpha * L_HM) / d(penultimate)
  std::size_t n_hard = 0;
  std::size_t n_skipped = 0;  // pool terms dropped because the pool was empty
};

inline MiningLoss mining_loss(const Matrix& penultimate, const MiningAssignment& assignment,
                              const MiningConfig& config) {
  validate_mining(config);
  if (config.n < 1) throw std::invalid_argument("mining_loss: n must be >= 1");
  const std::size_t dim = penultimate.cols();
  MiningLoss out;
  out.grad_penultimate = Matrix(penultimate.rows(), dim);
  out.n_hard = assignment.n_hard();
  if (out.n_hard == 0) return out;

  const auto mv = mean_vectors(assignment, penultimate);
  std::size_t eligible1 = 0, eligible2 = 0;
  // Raw (unscaled) gradients of L1 and L2 with respect to every batch row.
  Matrix g1(penultimate.rows(), dim), g2(penultimate.rows(), dim);
  std::vector<double> diff(dim);

  const auto accumulate = [&](std::size_t h, const Matrix& means, std::span<const std::size_t> pool,
                              Matrix& grad, double& loss) {
    const auto& a = assignment.hard[h];
    const auto y = penultimate.row(a.index);
    const auto m = means.row(h);
    double sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      diff[d] = y[d] - m[d];
      sq += diff[d] * diff[d];
    }
    loss += sq;
    auto gy = grad.row(a.index);
    for (std::size_t d = 0; d < dim; ++d) gy[d] += 2.0 * diff[d];
    if (config.neighbor_gradients) {
      const double share = 2.0 / static_cast<double>(pool.size());
      for (std::size_t j : pool) {
        auto gj = grad.row(j);
        for (std::size_t d = 0; d < dim; ++d) gj[d] -= share * diff[d];
      }
    }
  };

  for (std::size_t h = 0; h < assignment.n_hard(); ++h) {
    const auto& a = assignment.hard[h];
    if (a.has_same()) {
      ++eligible1;
      accumulate(h, mv.m1, a.same_class, g1, out.l1);
    } else {
      ++out.n_skipped;
    }
    if (a.has_opposite()) {
      ++eligible2;
      accumulate(h, mv.m2, a.opposite_class, g2, out.l2);
    } else {
      ++out.n_skipped;
    }
  }

  double scale1 = 1.0, scale2 = 1.0;
  if (config.reduction == Reduction::mean) {
    scale1 = eligible1 > 0 ? 1.0 / static_cast<double>(eligible1) : 0.0;
    scale2 = eligible2 > 0 ? 1.0 / static_cast<double>(eligible2) : 0.0;
    out.l1 *= scale1;
    out.l2 *= scale2;
  }

  double repel = 1.0 - out.l2;
  if (config.margin_clamp && repel <= 0.0) {
    repel = 0.0;
    scale2 = 0.0;
  }
  out.l_hm = out.l1 + repel;

  const double c1 = config.alpha * scale1;
  const double c2 = config.alpha * scale2;
  auto g = out.grad_penultimate.values();
  const auto v1 = g1.values();
  const auto v2 = g2.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = c1 * v1[i] - c2 * v2[i];
  return out;
}

inline double total_loss(double l_ce, double l_hm, double alpha) noexcept { return l_ce + alpha * l_hm; }

}  // namespace memefuse
