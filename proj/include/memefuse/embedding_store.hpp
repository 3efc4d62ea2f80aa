#pragma once

// On-disk dataset of precomputed meme embeddings.
//
// Layout of a dataset directory:
//   manifest.txt        UTF-8 "key = value" lines (see write_manifest_text)
//   <split>.fmb         one little-endian payload per split listed in the manifest
//   raw_texts.jsonl     optional audit block, one JSON object per line keyed by id
//
// Payload: "FMB1", u32 record_count, u32 embedding_dim, u32 responses_per_prompt,
// then per record: u32 id_len, id bytes, u8 label, u8 lmm_prediction, u8 hard,
// followed by (2 + 2K) blocks of D float32 values in the order
// [image, text, descriptions[0..K), emotions[0..K)].

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "memefuse/binary_io.hpp"

namespace memefuse {

inline constexpr int kFormatVersion = 1;
inline constexpr std::array<char, 4> kPayloadMagic = {'F', 'M', 'B', '1'};

enum class Split : std::uint8_t { train, validation, test };
inline constexpr std::array<Split, 3> kAllSplits = {Split::train, Split::validation, Split::test};

constexpr std::string_view split_name(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view name) noexcept {
  for (Split s : kAllSplits) {
    if (split_name(s) == name) return s;
  }
  return std::nullopt;
}

class DatasetError : public std::runtime_error {
 public:
  enum class Kind {
    dimension_mismatch,
    non_finite,
    duplicate_id,
    invalid_record,
    io,
    corrupt_manifest,
    corrupt_payload,
    count_mismatch,
    unsupported_version,
  };

  DatasetError(Kind kind, std::string record_id, std::string field, const std::string& message)
      : std::runtime_error(message),
        kind_(kind),
        record_id_(std::move(record_id)),
        field_(std::move(field)) {}

  [[nodiscard]] Kind kind() const noexcept { return kind_; }
  /// Offending record id, empty when the error is not tied to a record.
  [[nodiscard]] const std::string& record_id() const noexcept { return record_id_; }
  /// Offending block or manifest key, e.g. "emotion[1]".
  [[nodiscard]] const std::string& field() const noexcept { return field_; }

 private:
  Kind kind_;
  std::string record_id_;
  std::string field_;
};

struct DatasetManifest {
  std::uint32_t embedding_dim = 0;         // D1
  std::uint32_t responses_per_prompt = 0;  // K
  std::map<std::string, std::uint32_t> split_counts;
  std::string encoder_tag;
  int format_version = kFormatVersion;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct RawTexts {
  std::string embedded_text;
  std::vector<std::string> descriptions;
  std::vector<std::string> emotions;

  friend bool operator==(const RawTexts&, const RawTexts&) = default;
};

struct MemeRecord {
  std::string id;
  Split split = Split::train;
  std::uint8_t label = 0;           // 1 = hateful
  std::uint8_t lmm_prediction = 0;  // zero-shot LMM judgment
  bool hard = false;
  std::vector<float> image_embedding;
  std::vector<float> text_embedding;
  std::vector<std::vector<float>> description_embeddings;  // K vectors
  std::vector<std::vector<float>> emotion_embeddings;      // K vectors
  std::optional<RawTexts> raw_texts;

  friend bool operator==(const MemeRecord&, const MemeRecord&) = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<MemeRecord> records;

  [[nodiscard]] std::vector<const MemeRecord*> split(Split s) const {
    std::vector<const MemeRecord*> out;
    for (const auto& r : records) {
      if (r.split == s) out.push_back(&r);
    }
    return out;
  }
};

namespace detail {

inline void check_block(const MemeRecord& rec, std::span<const float> block, std::uint32_t dim,
                        const std::string& field) {
  using Kind = DatasetError::Kind;
  if (block.size() != dim) {
    throw DatasetError(Kind::dimension_mismatch, rec.id, field,
                       "record '" + rec.id + "': block " + field + " has length " +
                           std::to_string(block.size()) + ", expected " + std::to_string(dim));
  }
  for (float v : block) {
    if (!std::isfinite(v)) {
      throw DatasetError(Kind::non_finite, rec.id, field,
                         "record '" + rec.id + "': non-finite value in block " + field);
    }
  }
}

inline std::string indexed(std::string_view base, std::size_t i) {
  return std::string(base) + "[" + std::to_string(i) + "]";
}

}  // namespace detail

inline void validate_manifest(const DatasetManifest& m) {
  using Kind = DatasetError::Kind;
  if (m.format_version != kFormatVersion) {
    throw DatasetError(Kind::unsupported_version, "", "format_version",
                       "unsupported format_version " + std::to_string(m.format_version));
  }
  if (m.embedding_dim < 1) {
    throw DatasetError(Kind::corrupt_manifest, "", "embedding_dim", "embedding_dim must be >= 1");
  }
  if (m.responses_per_prompt < 1) {
    throw DatasetError(Kind::corrupt_manifest, "", "responses_per_prompt",
                       "responses_per_prompt must be >= 1");
  }
  for (const auto& [name, count] : m.split_counts) {
    if (!parse_split(name)) {
      throw DatasetError(Kind::corrupt_manifest, "", "split." + name, "unknown split '" + name + "'");
    }
  }
  if (m.encoder_tag.find_first_of("\r\n") != std::string::npos ||
      (!m.encoder_tag.empty() &&
       (std::isspace(static_cast<unsigned char>(m.encoder_tag.front())) ||
        std::isspace(static_cast<unsigned char>(m.encoder_tag.back()))))) {
    throw DatasetError(Kind::corrupt_manifest, "", "encoder_tag",
                       "encoder_tag must be a single line without surrounding whitespace");
  }
}

/// Checks one record against the manifest's D1 and K. Throws DatasetError naming
/// the record id and the first offending block.
inline void validate_record(const MemeRecord& rec, const DatasetManifest& m) {
  using Kind = DatasetError::Kind;
  if (rec.id.empty()) {
    throw DatasetError(Kind::invalid_record, rec.id, "id", "record with empty id");
  }
  if (rec.label > 1 || rec.lmm_prediction > 1) {
    throw DatasetError(Kind::invalid_record, rec.id, "label",
                       "record '" + rec.id + "': label and lmm_prediction must be 0 or 1");
  }
  if (rec.split == Split::train) {
    if (rec.hard != (rec.lmm_prediction != rec.label)) {
      throw DatasetError(Kind::invalid_record, rec.id, "hard",
                         "record '" + rec.id + "': hard must equal (lmm_prediction != label)");
    }
  } else if (rec.hard) {
    throw DatasetError(Kind::invalid_record, rec.id, "hard",
                       "record '" + rec.id + "': hard is only meaningful for train records");
  }
  const std::uint32_t dim = m.embedding_dim;
  detail::check_block(rec, rec.image_embedding, dim, "image");
  detail::check_block(rec, rec.text_embedding, dim, "text");
  const auto check_group = [&](const std::vector<std::vector<float>>& group, std::string_view name) {
    if (group.size() != m.responses_per_prompt) {
      throw DatasetError(Kind::dimension_mismatch, rec.id, std::string(name),
                         "record '" + rec.id + "': " + std::string(name) + " has " +
                             std::to_string(group.size()) + " vectors, expected " +
                             std::to_string(m.responses_per_prompt));
    }
    for (std::size_t k = 0; k < group.size(); ++k) {
      detail::check_block(rec, group[k], dim, detail::indexed(name, k));
    }
  };
  check_group(rec.description_embeddings, "description");
  check_group(rec.emotion_embeddings, "emotion");
}

inline void validate_records(const DatasetManifest& m, std::span<const MemeRecord> records) {
  std::unordered_set<std::string_view> seen;
  for (const auto& rec : records) {
    validate_record(rec, m);
    if (!seen.insert(rec.id).second) {
      throw DatasetError(DatasetError::Kind::duplicate_id, rec.id, "id",
                         "duplicate record id '" + rec.id + "'");
    }
  }
}

inline std::string write_manifest_text(const DatasetManifest& m) {
  std::ostringstream out;
  out << "# memefuse dataset manifest\n";
  out << "format_version = " << m.format_version << "\n";
  out << "embedding_dim = " << m.embedding_dim << "\n";
  out << "responses_per_prompt = " << m.responses_per_prompt << "\n";
  out << "encoder_tag = " << m.encoder_tag << "\n";
  for (Split s : kAllSplits) {
    if (auto it = m.split_counts.find(std::string(split_name(s))); it != m.split_counts.end()) {
      out << "split." << it->first << " = " << it->second << "\n";
    }
  }
  return out.str();
}

namespace detail {

inline std::string_view trim(std::string_view s) noexcept {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view text) {
  Int v{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) {
    throw DatasetError(DatasetError::Kind::corrupt_manifest, "", std::string(key),
                       "manifest: invalid integer for '" + std::string(key) + "': '" +
                           std::string(text) + "'");
  }
  return v;
}

}  // namespace detail

inline DatasetManifest parse_manifest_text(std::string_view text) {
  using Kind = DatasetError::Kind;
  DatasetManifest m;
  m.format_version = -1;
  bool have_dim = false, have_k = false;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = detail::trim(text.substr(start, end - start));
    start = end + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw DatasetError(Kind::corrupt_manifest, "", "", "manifest: malformed line '" + std::string(line) + "'");
    }
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key == "format_version") {
      m.format_version = detail::parse_int<int>(key, value);
    } else if (key == "embedding_dim") {
      m.embedding_dim = detail::parse_int<std::uint32_t>(key, value);
      have_dim = true;
    } else if (key == "responses_per_prompt") {
      m.responses_per_prompt = detail::parse_int<std::uint32_t>(key, value);
      have_k = true;
    } else if (key == "encoder_tag") {
      m.encoder_tag = std::string(value);
    } else if (key.starts_with("split.")) {
      m.split_counts[std::string(key.substr(6))] = detail::parse_int<std::uint32_t>(key, value);
    } else {
      throw DatasetError(Kind::corrupt_manifest, "", std::string(key),
                         "manifest: unknown key '" + std::string(key) + "'");
    }
  }
  if (m.format_version == -1) {
    throw DatasetError(Kind::corrupt_manifest, "", "format_version", "manifest: missing format_version");
  }
  if (m.format_version != kFormatVersion) {
    throw DatasetError(Kind::unsupported_version, "", "format_version",
                       "unsupported format_version " + std::to_string(m.format_version));
  }
  if (!have_dim || !have_k) {
    throw DatasetError(Kind::corrupt_manifest, "", have_dim ? "responses_per_prompt" : "embedding_dim",
                       "manifest: missing embedding_dim or responses_per_prompt");
  }
  validate_manifest(m);
  return m;
}

inline std::filesystem::path payload_path(const std::filesystem::path& dir, Split s) {
  return dir / (std::string(split_name(s)) + ".fmb");
}

/// Writes manifest, one payload per split named in split_counts, and
/// raw_texts.jsonl when any record carries raw texts.
inline void write_dataset(const DatasetManifest& manifest, std::span<const MemeRecord> records,
                          const std::filesystem::path& dir) {
  using Kind = DatasetError::Kind;
  validate_manifest(manifest);
  validate_records(manifest, records);

  std::map<std::string, std::uint32_t> actual;
  for (const auto& r : records) ++actual[std::string(split_name(r.split))];
  for (const auto& [name, count] : actual) {
    const auto it = manifest.split_counts.find(name);
    if (it == manifest.split_counts.end() || it->second != count) {
      throw DatasetError(Kind::count_mismatch, "", "split." + name,
                         "manifest split_counts disagree with records for split '" + name + "'");
    }
  }
  for (const auto& [name, count] : manifest.split_counts) {
    if (count != 0 && !actual.contains(name)) {
      throw DatasetError(Kind::count_mismatch, "", "split." + name,
                         "manifest split_counts disagree with records for split '" + name + "'");
    }
  }
  const DatasetManifest& out = manifest;

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw DatasetError(Kind::io, "", "", "cannot create dataset directory '" + dir.string() + "'");
  }

  for (Split s : kAllSplits) {
    const auto it = out.split_counts.find(std::string(split_name(s)));
    if (it == out.split_counts.end()) continue;
    binary::Writer w;
    w.put_bytes(std::string_view(kPayloadMagic.data(), kPayloadMagic.size()));
    w.put_u32(it->second);
    w.put_u32(out.embedding_dim);
    w.put_u32(out.responses_per_prompt);
    for (const auto& r : records) {
      if (r.split != s) continue;
      w.put_u32(static_cast<std::uint32_t>(r.id.size()));
      w.put_bytes(r.id);
      w.put_u8(r.label);
      w.put_u8(r.lmm_prediction);
      w.put_u8(r.hard ? 1 : 0);
      for (float v : r.image_embedding) w.put_f32(v);
      for (float v : r.text_embedding) w.put_f32(v);
      for (const auto& block : r.description_embeddings)
        for (float v : block) w.put_f32(v);
      for (const auto& block : r.emotion_embeddings)
        for (float v : block) w.put_f32(v);
    }
    const auto path = payload_path(dir, s);
    if (!binary::write_file(path, w.bytes())) {
      throw DatasetError(Kind::io, "", "", "cannot write '" + path.string() + "'");
    }
  }

  const bool any_raw = std::any_of(records.begin(), records.end(),
                                   [](const MemeRecord& r) { return r.raw_texts.has_value(); });
  const auto raw_path = dir / "raw_texts.jsonl";
  if (any_raw) {
    std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
    for (const auto& r : records) {
      if (!r.raw_texts) continue;
      nlohmann::json line = {{"id", r.id},
                             {"embedded_text", r.raw_texts->embedded_text},
                             {"descriptions", r.raw_texts->descriptions},
                             {"emotions", r.raw_texts->emotions}};
      raw << line.dump() << "\n";
    }
    if (!raw) throw DatasetError(Kind::io, "", "", "cannot write '" + raw_path.string() + "'");
  } else {
    std::filesystem::remove(raw_path, ec);
  }

  const auto manifest_path = dir / "manifest.txt";
  std::ofstream mf(manifest_path, std::ios::binary | std::ios::trunc);
  mf << write_manifest_text(out);
  if (!mf) throw DatasetError(Kind::io, "", "", "cannot write '" + manifest_path.string() + "'");
}

namespace detail {

inline void read_payload(const std::filesystem::path& path, Split split, const DatasetManifest& m,
                         std::uint32_t expected_count, std::vector<MemeRecord>& out) {
  using Kind = DatasetError::Kind;
  std::vector<std::uint8_t> bytes;
  if (!binary::read_file(path, bytes)) {
    throw DatasetError(Kind::io, "", std::string(split_name(split)),
                       "cannot read payload '" + path.string() + "'");
  }
  binary::Reader r(bytes);
  std::string current_id;
  try {
    const auto magic = r.get_string(4);
    if (magic != std::string_view(kPayloadMagic.data(), kPayloadMagic.size())) {
      throw DatasetError(Kind::corrupt_payload, "", std::string(split_name(split)),
                         "payload '" + path.string() + "': bad magic");
    }
    const auto count = r.get_u32();
    const auto dim = r.get_u32();
    const auto k = r.get_u32();
    if (count != expected_count) {
      throw DatasetError(Kind::count_mismatch, "", std::string(split_name(split)),
                         "payload '" + path.string() + "' holds " + std::to_string(count) +
                             " records, manifest claims " + std::to_string(expected_count));
    }
    if (dim != m.embedding_dim || k != m.responses_per_prompt) {
      throw DatasetError(Kind::dimension_mismatch, "", std::string(split_name(split)),
                         "payload '" + path.string() + "' header disagrees with manifest D/K");
    }
    const std::size_t block_bytes = std::size_t{dim} * 4;
    for (std::uint32_t i = 0; i < count; ++i) {
      MemeRecord rec;
      rec.split = split;
      const auto id_len = r.get_u32();
      if (id_len > r.remaining()) throw binary::TruncatedInput("id length exceeds payload");
      rec.id = r.get_string(id_len);
      current_id = rec.id;
      rec.label = r.get_u8();
      rec.lmm_prediction = r.get_u8();
      const auto hard = r.get_u8();
      if (hard > 1) {
        throw DatasetError(Kind::corrupt_payload, rec.id, "hard", "record '" + rec.id + "': bad hard byte");
      }
      rec.hard = hard == 1;
      const std::size_t blocks = 2 + 2 * std::size_t{k};
      if (blocks * block_bytes > r.remaining()) {
        throw binary::TruncatedInput("record '" + rec.id + "' extends past end of payload");
      }
      const auto read_block = [&] {
        std::vector<float> v(dim);
        for (auto& x : v) x = r.get_f32();
        return v;
      };
      rec.image_embedding = read_block();
      rec.text_embedding = read_block();
      rec.description_embeddings.reserve(k);
      for (std::uint32_t j = 0; j < k; ++j) rec.description_embeddings.push_back(read_block());
      rec.emotion_embeddings.reserve(k);
      for (std::uint32_t j = 0; j < k; ++j) rec.emotion_embeddings.push_back(read_block());
      out.push_back(std::move(rec));
    }
  } catch (const binary::TruncatedInput& e) {
    throw DatasetError(Kind::corrupt_payload, current_id, std::string(split_name(split)),
                       "payload '" + path.string() + "' is truncated: " + e.what());
  }
  if (r.remaining() != 0) {
    throw DatasetError(Kind::corrupt_payload, "", std::string(split_name(split)),
                       "payload '" + path.string() + "' has " + std::to_string(r.remaining()) +
                           " trailing bytes");
  }
}

}  // namespace detail

/// Loads and fully validates a dataset directory. Records come back in on-disk
/// order: train, validation, test, each in payload order.
inline Dataset read_dataset(const std::filesystem::path& dir) {
  using Kind = DatasetError::Kind;
  const auto manifest_path = dir / "manifest.txt";
  std::ifstream mf(manifest_path, std::ios::binary);
  if (!mf) {
    throw DatasetError(Kind::io, "", "", "cannot read manifest '" + manifest_path.string() + "'");
  }
  std::stringstream buf;
  buf << mf.rdbuf();
  Dataset ds;
  ds.manifest = parse_manifest_text(buf.str());

  for (Split s : kAllSplits) {
    const auto it = ds.manifest.split_counts.find(std::string(split_name(s)));
    if (it == ds.manifest.split_counts.end()) continue;
    detail::read_payload(payload_path(dir, s), s, ds.manifest, it->second, ds.records);
  }
  validate_records(ds.manifest, ds.records);

  const auto raw_path = dir / "raw_texts.jsonl";
  if (std::filesystem::exists(raw_path)) {
    std::unordered_map<std::string_view, MemeRecord*> by_id;
    for (auto& r : ds.records) by_id.emplace(r.id, &r);
    std::ifstream raw(raw_path, std::ios::binary);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(raw, line)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        const auto id = j.at("id").get<std::string>();
        auto hit = by_id.find(id);
        if (hit == by_id.end()) {
          throw DatasetError(Kind::invalid_record, id, "raw_texts",
                             "raw_texts.jsonl names unknown record '" + id + "'");
        }
        hit->second->raw_texts = RawTexts{j.at("embedded_text").get<std::string>(),
                                          j.at("descriptions").get<std::vector<std::string>>(),
                                          j.at("emotions").get<std::vector<std::string>>()};
      } catch (const nlohmann::json::exception& e) {
        throw DatasetError(Kind::corrupt_payload, "", "raw_texts",
                           "raw_texts.jsonl line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  return ds;
}

}  // namespace memefuse
