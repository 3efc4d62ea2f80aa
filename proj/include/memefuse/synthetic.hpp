#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "memefuse/embedding_store.hpp"
#include "memefuse/rng.hpp"

namespace memefuse {

struct ClassCounts {
  std::uint32_t negative = 0;  // label 0
  std::uint32_t positive = 0;  // label 1

  [[nodiscard]] std::uint32_t total() const noexcept { return negative + positive; }
};

/// Parameters of the planted synthetic generator.
///
/// Class means sit at +/- separation/2 along a seeded unit direction u. Each of
/// the four block kinds sees u through its own fixed seeded signed permutation,
/// and every block vector (each description/emotion response included) is its
/// class mean plus independent Gaussian noise of scale `noise`. Hard training
/// records have the mean of all four blocks moved hard_shift units toward the
/// opposite class mean.
struct SyntheticSpec {
  std::uint32_t embedding_dim = 16;
  std::uint32_t responses_per_prompt = 10;
  std::array<ClassCounts, 3> counts{};  // indexed by Split
  double separation = 2.0;
  double noise = 1.0;
  double hard_fraction = 0.0;
  double hard_shift = 0.0;
  std::uint64_t seed = 0;

  ClassCounts& operator[](Split s) noexcept { return counts[static_cast<std::size_t>(s)]; }
  const ClassCounts& operator[](Split s) const noexcept { return counts[static_cast<std::size_t>(s)]; }
};

inline void validate_synthetic_spec(const SyntheticSpec& spec) {
  if (spec.embedding_dim < 1) throw std::invalid_argument("synthetic: embedding_dim must be >= 1");
  if (spec.responses_per_prompt < 1) throw std::invalid_argument("synthetic: responses_per_prompt must be >= 1");
  if (!(spec.hard_fraction >= 0.0 && spec.hard_fraction <= 1.0)) {
    throw std::invalid_argument("synthetic: hard_fraction must lie in [0, 1]");
  }
  if (!(spec.noise > 0.0) || !std::isfinite(spec.noise)) {
    throw std::invalid_argument("synthetic: noise must be > 0");
  }
  if (!std::isfinite(spec.separation) || !std::isfinite(spec.hard_shift)) {
    throw std::invalid_argument("synthetic: separation and hard_shift must be finite");
  }
}

/// Number of planted hard records for a train split of the given size.
inline std::uint32_t planted_hard_count(double hard_fraction, std::uint32_t train_size) noexcept {
  return static_cast<std::uint32_t>(std::floor(hard_fraction * static_cast<double>(train_size)));
}

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  validate_synthetic_spec(spec);
  const std::size_t dim = spec.embedding_dim;
  const SplitMix64 root(spec.seed);

  std::vector<double> direction(dim);
  {
    auto rng = root.split(1);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : direction) {
        v = rng.normal();
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& v : direction) v /= norm;
  }

  // One signed permutation per block kind: image, text, description, emotion.
  struct SignedPermutation {
    std::vector<std::size_t> index;
    std::vector<double> sign;
  };
  std::array<SignedPermutation, 4> views;
  for (std::size_t b = 0; b < views.size(); ++b) {
    auto rng = root.split(2 + b);
    views[b].index.resize(dim);
    std::iota(views[b].index.begin(), views[b].index.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(views[b].index));
    views[b].sign.resize(dim);
    for (auto& s : views[b].sign) s = (rng() >> 63) ? -1.0 : 1.0;
  }

  Dataset ds;
  ds.manifest.embedding_dim = spec.embedding_dim;
  ds.manifest.responses_per_prompt = spec.responses_per_prompt;
  ds.manifest.encoder_tag = "synthetic";
  for (Split s : kAllSplits) {
    ds.manifest.split_counts[std::string(split_name(s))] = spec[s].total();
  }

  for (Split s : kAllSplits) {
    const auto split_index = static_cast<std::uint64_t>(s);
    const ClassCounts counts = spec[s];
    std::vector<std::uint8_t> labels(counts.total(), 0);
    std::fill(labels.begin() + counts.negative, labels.end(), std::uint8_t{1});
    auto order_rng = root.split(100 + split_index);
    order_rng.shuffle(std::span<std::uint8_t>(labels));

    std::vector<bool> hard(labels.size(), false);
    if (s == Split::train) {
      std::vector<std::size_t> pick(labels.size());
      std::iota(pick.begin(), pick.end(), std::size_t{0});
      auto hard_rng = root.split(200);
      hard_rng.shuffle(std::span<std::size_t>(pick));
      const auto n_hard = planted_hard_count(spec.hard_fraction, counts.total());
      for (std::uint32_t i = 0; i < n_hard; ++i) hard[pick[i]] = true;
    }

    const auto split_rng = root.split(1000 + split_index);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      auto rng = split_rng.split(i);
      MemeRecord rec;
      char id[64];
      std::snprintf(id, sizeof id, "%s-%06zu", std::string(split_name(s)).c_str(), i);
      rec.id = id;
      rec.split = s;
      rec.label = labels[i];
      rec.hard = hard[i];
      rec.lmm_prediction = rec.hard ? static_cast<std::uint8_t>(1 - rec.label) : rec.label;

      const double side = rec.label == 1 ? 1.0 : -1.0;
      double offset = side * 0.5 * spec.separation;
      if (rec.hard) offset -= side * spec.hard_shift;
      const auto draw_view = [&](const SignedPermutation& view) {
        std::vector<float> out(dim);
        for (std::size_t d = 0; d < dim; ++d) {
          out[d] = static_cast<float>(view.sign[d] * offset * direction[view.index[d]] + spec.noise * rng.normal());
        }
        return out;
      };
      rec.image_embedding = draw_view(views[0]);
      rec.text_embedding = draw_view(views[1]);
      for (std::uint32_t k = 0; k < spec.responses_per_prompt; ++k) {
        rec.description_embeddings.push_back(draw_view(views[2]));
      }
      for (std::uint32_t k = 0; k < spec.responses_per_prompt; ++k) {
        rec.emotion_embeddings.push_back(draw_view(views[3]));
      }
      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

}  // namespace memefuse
