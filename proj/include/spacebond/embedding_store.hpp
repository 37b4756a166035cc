#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "spacebond/matrix.hpp"

namespace spacebond {

enum class Modality { audio, image, text };

inline constexpr std::array<Modality, 3> kAllModalities = {Modality::audio, Modality::image,
                                                            Modality::text};

constexpr std::string_view to_string(Modality m) noexcept {
  switch (m) {
    case Modality::audio: return "audio";
    case Modality::image: return "image";
    case Modality::text: return "text";
  }
  return "?";
}

/// One-letter tag used in subset names (T, V, A).
constexpr char modality_letter(Modality m) noexcept {
  switch (m) {
    case Modality::audio: return 'A';
    case Modality::image: return 'V';
    case Modality::text: return 'T';
  }
  return '?';
}

inline Modality parse_modality(std::string_view s) {
  if (s == "audio") return Modality::audio;
  if (s == "image") return Modality::image;
  if (s == "text") return Modality::text;
  throw SpaceBondError("unknown modality '" + std::string(s) + "'");
}

/// n×d row embeddings with one opaque identifier per row.
/// Immutable once constructed; the constructor enforces the invariants.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  EmbeddingMatrix(std::vector<std::string> ids, Matrix data, std::string_view origin = "matrix")
      : ids_(std::move(ids)), data_(std::move(data)) {
    const std::string where(origin);
    if (ids_.size() != data_.rows()) {
      throw SpaceBondError(where + ": " + std::to_string(ids_.size()) + " ids for " +
                           std::to_string(data_.rows()) + " rows");
    }
    index_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!index_.emplace(ids_[i], i).second) {
        throw SpaceBondError(where + ": duplicate id '" + ids_[i] + "' at row " + std::to_string(i));
      }
    }
    for (std::size_t i = 0; i < data_.rows(); ++i) {
      for (float v : data_.row(i)) {
        if (!std::isfinite(v)) {
          throw SpaceBondError(where + ": non-finite value at row " + std::to_string(i));
        }
      }
    }
  }

  std::size_t n() const noexcept { return data_.rows(); }
  std::size_t d() const noexcept { return data_.cols(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const Matrix& data() const noexcept { return data_; }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Rows for the given ids, in the given order.
  EmbeddingMatrix select(const std::vector<std::string>& ids) const {
    std::vector<std::size_t> rows;
    rows.reserve(ids.size());
    for (const auto& id : ids) {
      auto r = find(id);
      if (!r) throw SpaceBondError("id '" + id + "' not present");
      rows.push_back(*r);
    }
    return EmbeddingMatrix(ids, gather_rows(data_, rows));
  }

  friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    return a.ids_ == b.ids_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::string> ids_;
  Matrix data_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// A named embedding space: one matrix per modality, all of dimension dim.
struct SpaceBundle {
  std::string name;
  std::size_t dim = 0;
  std::map<Modality, EmbeddingMatrix> modalities;

  bool has(Modality m) const { return modalities.count(m) != 0; }

  const EmbeddingMatrix& at(Modality m) const {
    auto it = modalities.find(m);
    if (it == modalities.end()) {
      throw SpaceBondError("space '" + name + "' has no " + std::string(to_string(m)) + " modality");
    }
    return it->second;
  }

  void validate() const {
    if (modalities.empty()) throw SpaceBondError("space has no modalities");
    if (dim == 0) throw SpaceBondError("space '" + name + "': dim must be positive");
    for (const auto& [m, mat] : modalities) {
      if (mat.d() != dim) {
        throw SpaceBondError("space '" + name + "': " + std::string(to_string(m)) + " has d=" +
                             std::to_string(mat.d()) + ", expected " + std::to_string(dim));
      }
    }
  }

  friend bool operator==(const SpaceBundle& a, const SpaceBundle& b) {
    return a.name == b.name && a.dim == b.dim && a.modalities == b.modalities;
  }
};

inline void require_unified(const SpaceBundle& s) {
  for (Modality m : kAllModalities) {
    if (!s.has(m)) {
      throw SpaceBondError("unified space '" + s.name + "' lacks " + std::string(to_string(m)));
    }
  }
}

inline void require_expert(const SpaceBundle& s, Modality a, Modality b) {
  if (!s.has(a) || !s.has(b)) {
    throw SpaceBondError("expert space '" + s.name + "' must hold " + std::string(to_string(a)) +
                         " and " + std::string(to_string(b)));
  }
}

inline EmbeddingMatrix normalize_rows(const EmbeddingMatrix& m) {
  return EmbeddingMatrix(m.ids(), normalized_rows(m.data()));
}

inline SpaceBundle normalize_space(const SpaceBundle& s) {
  SpaceBundle out{s.name, s.dim, {}};
  for (const auto& [m, mat] : s.modalities) out.modalities.emplace(m, normalize_rows(mat));
  return out;
}

/// Entry (i, j) = cos(q_i, k_j).
inline Matrix cosine_similarity(const Matrix& q, const Matrix& k) {
  if (q.cols() != k.cols()) {
    throw SpaceBondError("cosine_similarity: dimension mismatch (" + std::to_string(q.cols()) +
                         " vs " + std::to_string(k.cols()) + ")");
  }
  return matmul_bt(normalized_rows(q), normalized_rows(k));
}

inline Matrix cosine_similarity(const EmbeddingMatrix& q, const EmbeddingMatrix& k) {
  return cosine_similarity(q.data(), k.data());
}

// ---------------------------------------------------------------------------
// On-disk format.
//
// Embedding file, little-endian:
//   "EMB1" | u32 version=1 | u32 n | u32 d | n*d f32 row-major | n ids, '\n'-terminated
// Manifest (JSON):
//   {"name": str, "dim": int, "modalities": {"text": "text.emb", ...}}

namespace io {

inline constexpr std::array<char, 4> kEmbeddingMagic = {'E', 'M', 'B', '1'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((v >> s) & 0xffu));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(const std::string& buf, std::size_t pos) {
  std::uint32_t v = 0;
  for (int b = 3; b >= 0; --b) {
    v = (v << 8) | static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(b)]);
  }
  return v;
}

inline float get_f32(const std::string& buf, std::size_t pos) {
  return std::bit_cast<float>(get_u32(buf, pos));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpaceBondError(path.string() + ": cannot open");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SpaceBondError(path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw SpaceBondError(path.string() + ": write failed");
}

inline std::string encode_embedding(const EmbeddingMatrix& m) {
  std::string out;
  out.reserve(16 + m.n() * m.d() * 4 + m.n() * 12);
  out.append(kEmbeddingMagic.data(), kEmbeddingMagic.size());
  put_u32(out, kEmbeddingVersion);
  put_u32(out, static_cast<std::uint32_t>(m.n()));
  put_u32(out, static_cast<std::uint32_t>(m.d()));
  for (float v : m.data().flat()) put_f32(out, v);
  for (std::size_t i = 0; i < m.n(); ++i) {
    const auto& id = m.ids()[i];
    if (id.empty() || id.find('\n') != std::string::npos) {
      throw SpaceBondError("id at row " + std::to_string(i) + " is empty or contains a newline");
    }
    out += id;
    out.push_back('\n');
  }
  return out;
}

inline EmbeddingMatrix decode_embedding(const std::string& buf, const std::string& origin) {
  if (buf.size() < 16) throw SpaceBondError(origin + ": malformed header (file too short)");
  if (std::memcmp(buf.data(), kEmbeddingMagic.data(), 4) != 0) {
    throw SpaceBondError(origin + ": malformed header (bad magic)");
  }
  const std::uint32_t version = get_u32(buf, 4);
  if (version != kEmbeddingVersion) {
    throw SpaceBondError(origin + ": malformed header (unsupported version " +
                         std::to_string(version) + ")");
  }
  const std::size_t n = get_u32(buf, 8);
  const std::size_t d = get_u32(buf, 12);
  if (d == 0) throw SpaceBondError(origin + ": malformed header (d = 0)");
  const std::size_t payload_end = 16 + n * d * 4;
  if (buf.size() < payload_end) throw SpaceBondError(origin + ": payload size mismatch");

  Matrix data(n, d);
  auto flat = data.flat();
  for (std::size_t i = 0; i < n * d; ++i) flat[i] = get_f32(buf, 16 + 4 * i);

  std::vector<std::string> ids;
  ids.reserve(n);
  std::size_t pos = payload_end;
  while (pos < buf.size()) {
    const std::size_t nl = buf.find('\n', pos);
    if (nl == std::string::npos) {
      throw SpaceBondError(origin + ": payload size mismatch (unterminated id after row " +
                           std::to_string(ids.size()) + ")");
    }
    ids.emplace_back(buf, pos, nl - pos);
    pos = nl + 1;
  }
  if (ids.size() != n) {
    throw SpaceBondError(origin + ": payload size mismatch (header n=" + std::to_string(n) +
                         ", found " + std::to_string(ids.size()) + " id lines)");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i].empty()) throw SpaceBondError(origin + ": empty id at row " + std::to_string(i));
  }
  return EmbeddingMatrix(std::move(ids), std::move(data), origin);
}

}  // namespace io

inline void save_embedding(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  io::write_file(path, io::encode_embedding(m));
}

inline EmbeddingMatrix load_embedding(const std::filesystem::path& path) {
  return io::decode_embedding(io::read_file(path), path.string());
}

/// Writes `<dir>/manifest.json` plus one `<modality>.emb` per modality.
inline void save_space(const SpaceBundle& space, const std::filesystem::path& dir) {
  space.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw SpaceBondError(dir.string() + ": " + ec.message());
  nlohmann::ordered_json manifest;
  manifest["name"] = space.name;
  manifest["dim"] = space.dim;
  manifest["modalities"] = nlohmann::ordered_json::object();
  for (const auto& [m, mat] : space.modalities) {
    const std::string file = std::string(to_string(m)) + ".emb";
    save_embedding(mat, dir / file);
    manifest["modalities"][std::string(to_string(m))] = file;
  }
  io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

struct LoadOptions {
  bool normalize = false;
};

/// `path` is either a space directory or its manifest file.
inline SpaceBundle load_space(const std::filesystem::path& path, LoadOptions opts = {}) {
  const auto manifest_path =
      std::filesystem::is_directory(path) ? path / "manifest.json" : path;
  const auto dir = manifest_path.parent_path();
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw SpaceBondError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  SpaceBundle space;
  try {
    space.name = manifest.at("name").get<std::string>();
    const auto dim = manifest.at("dim").get<long long>();
    if (dim <= 0) throw SpaceBondError(manifest_path.string() + ": dim must be positive");
    space.dim = static_cast<std::size_t>(dim);
    for (const auto& [tag, file] : manifest.at("modalities").items()) {
      const Modality m = parse_modality(tag);
      const auto file_path = dir / file.get<std::string>();
      EmbeddingMatrix mat = load_embedding(file_path);
      if (mat.d() != space.dim) {
        throw SpaceBondError(file_path.string() + ": dimension mismatch (d=" +
                             std::to_string(mat.d()) + ", manifest dim=" +
                             std::to_string(space.dim) + ")");
      }
      space.modalities.emplace(m, opts.normalize ? normalize_rows(mat) : std::move(mat));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SpaceBondError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  space.validate();
  return space;
}

}  // namespace spacebond
