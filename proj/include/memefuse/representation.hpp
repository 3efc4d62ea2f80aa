#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "memefuse/embedding_store.hpp"
#include "memefuse/matrix.hpp"

namespace memefuse {

/// Which embedding blocks enter the head input. Output order is always
/// [image, text, descriptions, emotions] regardless of which flags are set.
struct FusionConfig {
  bool use_image = true;
  bool use_text = true;
  bool use_descriptions = true;
  bool use_emotions = true;
  bool l2_normalize_blocks = false;

  [[nodiscard]] std::size_t enabled_blocks() const noexcept {
    return std::size_t{use_image} + use_text + use_descriptions + use_emotions;
  }

  [[nodiscard]] std::string tag() const {
    std::string t;
    if (use_image) t += "i";
    if (use_text) t += "t";
    if (use_descriptions) t += "d";
    if (use_emotions) t += "m";
    return t;
  }

  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

inline void validate_fusion(const FusionConfig& config) {
  if (config.enabled_blocks() == 0) {
    throw std::invalid_argument("fusion: at least one embedding block must be enabled");
  }
}

/// Input width of the head for a given encoder width.
inline std::size_t fused_width(const FusionConfig& config, std::size_t embedding_dim) noexcept {
  return embedding_dim * config.enabled_blocks();
}

struct FusedSample {
  std::vector<double> features;
  std::uint8_t label = 0;
  bool hard = false;
  std::string id;
};

/// Component-wise mean of K equally long vectors.
template <typename T>
std::vector<double> pool_average(std::span<const std::vector<T>> vectors) {
  if (vectors.empty()) throw std::invalid_argument("pool_average: no vectors to pool");
  const std::size_t dim = vectors.front().size();
  std::vector<double> sum(dim, 0.0);
  for (const auto& v : vectors) {
    if (v.size() != dim) throw std::invalid_argument("pool_average: ragged input lengths");
    for (std::size_t d = 0; d < dim; ++d) sum[d] += static_cast<double>(v[d]);
  }
  const double k = static_cast<double>(vectors.size());
  for (auto& x : sum) x /= k;
  return sum;
}

template <typename T>
std::vector<double> pool_average(const std::vector<std::vector<T>>& vectors) {
  return pool_average(std::span<const std::vector<T>>(vectors));
}

namespace detail {

inline void append_block(std::vector<double>& out, std::span<const double> block, bool normalize) {
  double scale = 1.0;
  if (normalize) {
    double sq = 0.0;
    for (double v : block) sq += v * v;
    if (sq > 0.0) scale = 1.0 / std::sqrt(sq);
  }
  for (double v : block) out.push_back(normalize ? v * scale : v);
}

inline std::vector<double> widen(std::span<const float> v) { return {v.begin(), v.end()}; }

}  // namespace detail

inline FusedSample fuse(const MemeRecord& record, const FusionConfig& config) {
  validate_fusion(config);
  FusedSample out;
  out.label = record.label;
  out.hard = record.hard;
  out.id = record.id;
  out.features.reserve(record.image_embedding.size() * config.enabled_blocks());
  if (config.use_image) {
    detail::append_block(out.features, detail::widen(record.image_embedding), config.l2_normalize_blocks);
  }
  if (config.use_text) {
    detail::append_block(out.features, detail::widen(record.text_embedding), config.l2_normalize_blocks);
  }
  if (config.use_descriptions) {
    detail::append_block(out.features, pool_average(record.description_embeddings),
                         config.l2_normalize_blocks);
  }
  if (config.use_emotions) {
    detail::append_block(out.features, pool_average(record.emotion_embeddings),
                         config.l2_normalize_blocks);
  }
  return out;
}

/// Fused features of a record subset stacked as rows, with labels and hard flags.
struct FusedSplit {
  Matrix features;
  std::vector<std::uint8_t> labels;
  std::vector<bool> hard;
  std::vector<std::string> ids;

  [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
};

inline FusedSplit fuse_all(std::span<const MemeRecord* const> records, const FusionConfig& config,
                           std::size_t embedding_dim) {
  validate_fusion(config);
  FusedSplit out;
  out.features = Matrix(records.size(), fused_width(config, embedding_dim));
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto sample = fuse(*records[i], config);
    if (sample.features.size() != out.features.cols()) {
      throw std::invalid_argument("fuse: record '" + sample.id + "' has unexpected width");
    }
    std::copy(sample.features.begin(), sample.features.end(), out.features.row(i).begin());
    out.labels.push_back(sample.label);
    out.hard.push_back(sample.hard);
    out.ids.push_back(std::move(sample.id));
  }
  return out;
}

}  // namespace memefuse
