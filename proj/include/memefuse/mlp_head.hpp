#pragma once

// Three-layer classification head: input -> 512 -> 256 -> 2 with rectifiers
// after the two hidden layers. Forward and backward passes are written out by
// hand for exactly this architecture. The backward pass takes an additional
// gradient injected at the penultimate (post-activation) layer so that losses
// defined on the penultimate embeddings compose with cross entropy.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "memefuse/binary_io.hpp"
#include "memefuse/matrix.hpp"
#include "memefuse/rng.hpp"

namespace memefuse {

inline constexpr std::size_t kHidden1 = 512;
inline constexpr std::size_t kHidden2 = 256;
inline constexpr std::size_t kClasses = 2;

struct HeadShape {
  std::size_t input = 0;
  std::size_t hidden1 = kHidden1;
  std::size_t hidden2 = kHidden2;  // penultimate width

  friend bool operator==(const HeadShape&, const HeadShape&) = default;
};

/// Weights are stored fan_in x fan_out, so a layer computes x * W + b.
/// The same struct carries parameter gradients.
struct HeadParameters {
  Matrix w1;
  std::vector<double> b1;
  Matrix w2;
  std::vector<double> b2;
  Matrix w3;
  std::vector<double> b3;

  HeadParameters() = default;
  explicit HeadParameters(const HeadShape& s)
      : w1(s.input, s.hidden1),
        b1(s.hidden1, 0.0),
        w2(s.hidden1, s.hidden2),
        b2(s.hidden2, 0.0),
        w3(s.hidden2, kClasses),
        b3(kClasses, 0.0) {}

  [[nodiscard]] HeadShape shape() const noexcept { return {w1.rows(), w1.cols(), w2.cols()}; }

  /// Views over every tensor, in checkpoint order.
  std::array<std::span<double>, 6> tensors() noexcept {
    return {w1.values(), std::span<double>(b1), w2.values(), std::span<double>(b2), w3.values(),
            std::span<double>(b3)};
  }
  std::array<std::span<const double>, 6> tensors() const noexcept {
    return {w1.values(), std::span<const double>(b1), w2.values(), std::span<const double>(b2),
            w3.values(), std::span<const double>(b3)};
  }

  friend bool operator==(const HeadParameters&, const HeadParameters&) = default;
};

inline constexpr std::array<const char*, 6> kTensorNames = {"w1", "b1", "w2", "b2", "w3", "b3"};

/// Uniform fan-based bound sqrt(6 / (fan_in + fan_out)).
inline double init_bound(std::size_t fan_in, std::size_t fan_out) noexcept {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline HeadParameters init_parameters(const HeadShape& shape, std::uint64_t seed) {
  if (shape.input < 1 || shape.hidden1 < 1 || shape.hidden2 < 1) {
    throw std::invalid_argument("init_parameters: all layer widths must be >= 1");
  }
  HeadParameters p(shape);
  SplitMix64 rng(seed);
  for (Matrix* w : {&p.w1, &p.w2, &p.w3}) {
    const double bound = init_bound(w->rows(), w->cols());
    for (double& v : w->values()) v = rng.uniform(-bound, bound);
  }
  return p;
}

inline HeadParameters init_parameters(std::size_t input_dim, std::uint64_t seed) {
  return init_parameters(HeadShape{input_dim}, seed);
}

struct ForwardTrace {
  Matrix input;
  Matrix z1, a1;  // layer 1 pre/post activation
  Matrix z2, a2;  // layer 2 pre/post activation; a2 is the penultimate embedding
  Matrix logits;

  [[nodiscard]] const Matrix& penultimate() const noexcept { return a2; }
  [[nodiscard]] std::size_t batch() const noexcept { return input.rows(); }
};

namespace detail {

// out = x * W + b, row by row. Each output row depends only on its own input
// row, so results do not depend on batch composition.
inline void affine(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& out) {
  out = Matrix(x.rows(), w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto o = out.row(i);
    std::copy(b.begin(), b.end(), o.begin());
    const auto xi = x.row(i);
    for (std::size_t k = 0; k < xi.size(); ++k) {
      const double xk = xi[k];
      if (xk == 0.0) continue;
      const auto wk = w.row(k);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += xk * wk[j];
    }
  }
}

inline Matrix relu(const Matrix& z) {
  Matrix a = z;
  for (double& v : a.values()) v = v > 0.0 ? v : 0.0;
  return a;
}

// grad_w += x^T * dz, grad_b += column sums of dz.
inline void accumulate_affine_grad(const Matrix& x, const Matrix& dz, Matrix& grad_w,
                                   std::span<double> grad_b) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    const auto di = dz.row(i);
    for (std::size_t k = 0; k < xi.size(); ++k) {
      const double xk = xi[k];
      if (xk == 0.0) continue;
      auto gk = grad_w.row(k);
      for (std::size_t j = 0; j < di.size(); ++j) gk[j] += xk * di[j];
    }
    for (std::size_t j = 0; j < di.size(); ++j) grad_b[j] += di[j];
  }
}

// dx = dz * W^T.
inline Matrix backprop_input(const Matrix& dz, const Matrix& w) {
  Matrix dx(dz.rows(), w.rows());
  for (std::size_t i = 0; i < dz.rows(); ++i) {
    const auto di = dz.row(i);
    auto xi = dx.row(i);
    for (std::size_t k = 0; k < w.rows(); ++k) {
      const auto wk = w.row(k);
      double acc = 0.0;
      for (std::size_t j = 0; j < di.size(); ++j) acc += di[j] * wk[j];
      xi[k] = acc;
    }
  }
  return dx;
}

}  // namespace detail

inline ForwardTrace forward(const HeadParameters& params, const Matrix& batch_features) {
  if (batch_features.cols() != params.w1.rows()) {
    throw std::invalid_argument("forward: feature width " + std::to_string(batch_features.cols()) +
                                " does not match head input " + std::to_string(params.w1.rows()));
  }
  ForwardTrace t;
  t.input = batch_features;
  detail::affine(t.input, params.w1, params.b1, t.z1);
  t.a1 = detail::relu(t.z1);
  detail::affine(t.a1, params.w2, params.b2, t.z2);
  t.a2 = detail::relu(t.z2);
  detail::affine(t.a2, params.w3, params.b3, t.logits);
  return t;
}

struct CrossEntropyResult {
  double loss = 0.0;
  Matrix grad_logits;
};

/// Mean negative log-softmax of the true class, with its gradient
/// (softmax - onehot) / batch.
inline CrossEntropyResult cross_entropy(const Matrix& logits, std::span<const std::uint8_t> labels) {
  if (logits.rows() != labels.size()) {
    throw std::invalid_argument("cross_entropy: logits/labels batch mismatch");
  }
  CrossEntropyResult r;
  r.grad_logits = Matrix(logits.rows(), logits.cols());
  if (logits.rows() == 0) return r;
  const double inv_batch = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto z = logits.row(i);
    const double mx = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - mx);
    const double log_denom = std::log(denom);
    r.loss += -(z[labels[i]] - mx - log_denom);
    auto g = r.grad_logits.row(i);
    for (std::size_t c = 0; c < z.size(); ++c) {
      const double p = std::exp(z[c] - mx - log_denom);
      g[c] = (p - (c == labels[i] ? 1.0 : 0.0)) * inv_batch;
    }
  }
  r.loss *= inv_batch;
  return r;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) sum += (p[c] = std::exp(logits[c] - mx));
  for (double& v : p) v /= sum;
  return p;
}

/// Index of the largest logit; ties resolve to the lower class index.
inline std::uint8_t predict_class(std::span<const double> logits) noexcept {
  return static_cast<std::uint8_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

/// Exact parameter gradients for a loss whose derivative w.r.t. the logits is
/// grad_logits plus whose derivative w.r.t. the penultimate activations is
/// grad_penultimate. An empty grad_penultimate means no injected gradient.
inline HeadParameters backward(const ForwardTrace& trace, const Matrix& grad_logits,
                               const Matrix& grad_penultimate, const HeadParameters& params) {
  const std::size_t batch = trace.batch();
  require_shape(grad_logits, batch, kClasses, "backward: grad_logits");
  if (!grad_penultimate.empty()) {
    require_shape(grad_penultimate, batch, params.w2.cols(), "backward: grad_penultimate");
  }
  HeadParameters g(params.shape());

  detail::accumulate_affine_grad(trace.a2, grad_logits, g.w3, g.b3);

  Matrix d2 = detail::backprop_input(grad_logits, params.w3);
  if (!grad_penultimate.empty()) {
    auto dv = d2.values();
    const auto gp = grad_penultimate.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += gp[i];
  }
  {
    auto dv = d2.values();
    const auto z = trace.z2.values();
    for (std::size_t i = 0; i < dv.size(); ++i) {
      if (!(z[i] > 0.0)) dv[i] = 0.0;
    }
  }
  detail::accumulate_affine_grad(trace.a1, d2, g.w2, g.b2);

  Matrix d1 = detail::backprop_input(d2, params.w2);
  {
    auto dv = d1.values();
    const auto z = trace.z1.values();
    for (std::size_t i = 0; i < dv.size(); ++i) {
      if (!(z[i] > 0.0)) dv[i] = 0.0;
    }
  }
  detail::accumulate_affine_grad(trace.input, d1, g.w1, g.b1);
  return g;
}

inline constexpr std::array<char, 4> kHeadMagic = {'F', 'M', 'H', '1'};

/// Checkpoint: "FMH1", u32 input, u32 hidden1, u32 hidden2, u32 classes, then
/// float64 values of w1, b1, w2, b2, w3, b3 (weights row-major, fan_in x fan_out).
inline void save_head(const HeadParameters& params, const std::filesystem::path& path) {
  binary::Writer w;
  w.put_bytes(std::string_view(kHeadMagic.data(), kHeadMagic.size()));
  const auto s = params.shape();
  w.put_u32(static_cast<std::uint32_t>(s.input));
  w.put_u32(static_cast<std::uint32_t>(s.hidden1));
  w.put_u32(static_cast<std::uint32_t>(s.hidden2));
  w.put_u32(static_cast<std::uint32_t>(kClasses));
  for (const auto& t : params.tensors())
    for (double v : t) w.put_f64(v);
  if (!binary::write_file(path, w.bytes())) {
    throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
  }
}

inline HeadParameters load_head(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  if (!binary::read_file(path, bytes)) {
    throw std::runtime_error("cannot read checkpoint '" + path.string() + "'");
  }
  binary::Reader r(bytes);
  try {
    if (r.get_string(4) != std::string_view(kHeadMagic.data(), kHeadMagic.size())) {
      throw std::runtime_error("checkpoint '" + path.string() + "': bad magic");
    }
    HeadShape s;
    s.input = r.get_u32();
    s.hidden1 = r.get_u32();
    s.hidden2 = r.get_u32();
    if (r.get_u32() != kClasses || s.input == 0 || s.hidden1 == 0 || s.hidden2 == 0) {
      throw std::runtime_error("checkpoint '" + path.string() + "': bad shape header");
    }
    HeadParameters p(s);
    std::size_t total = 0;
    for (const auto& t : p.tensors()) total += t.size();
    if (r.remaining() != total * 8) {
      throw std::runtime_error("checkpoint '" + path.string() + "': size does not match shape");
    }
    for (auto t : p.tensors())
      for (double& v : t) v = r.get_f64();
    return p;
  } catch (const binary::TruncatedInput&) {
    throw std::runtime_error("checkpoint '" + path.string() + "' is truncated");
  }
}

}  // namespace memefuse
