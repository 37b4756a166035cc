#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spacebond/ensemble.hpp"

namespace spacebond {

/// λ weights the displacement expert's raw image/text against the remapped
/// unified embeddings; σ weights the remapped audio-text experts against
/// the (displaced) unified space.
struct CombiningFactors {
  double lambda_v = 0.9;
  double lambda_t = 0.9;
  double sigma_a = 0.0;
  double sigma_t = 0.0;

  void validate() const {
    for (double f : {lambda_v, lambda_t, sigma_a, sigma_t}) {
      if (!(f >= 0.0 && f <= 1.0)) throw SpaceBondError("combining factors must lie in [0, 1]");
    }
  }

  static CombiningFactors preset(const std::string& name, double lambda_v = 0.9, double lambda_t = 0.9) {
    if (name == "versatile") return {lambda_v, lambda_t, 0.5, 0.1};
    if (name == "at-expertise") return {lambda_v, lambda_t, 0.8, 0.5};
    if (name == "none") return {lambda_v, lambda_t, 0.0, 0.0};
    throw SpaceBondError("unknown factor preset '" + name + "' (versatile|at-expertise|none)");
  }
};

/// Flat per-channel weights. Layout:
///   audio: Âᵘ, Âᵃᵗ₁..ₙ
///   image: V̂ᵘ, Vᵛᵗ
///   text:  T̂ᵘ, Tᵛᵗ, T̂ᵃᵗ₁..ₙ
struct ModalityWeights {
  std::vector<double> audio;
  std::vector<double> image;
  std::vector<double> text;

  const std::vector<double>& of(Modality m) const {
    return m == Modality::audio ? audio : m == Modality::image ? image : text;
  }
};

inline ModalityWeights expand_factors(const CombiningFactors& f, std::size_t n_experts) {
  f.validate();
  if (n_experts == 0 && (f.sigma_a > 0.0 || f.sigma_t > 0.0)) throw SpaceBondError("no expert selected");
  ModalityWeights w;
  w.audio.push_back(1.0 - f.sigma_a);
  w.text.push_back((1.0 - f.sigma_t) * (1.0 - f.lambda_t));
  w.text.push_back((1.0 - f.sigma_t) * f.lambda_t);
  for (std::size_t i = 0; i < n_experts; ++i) {
    w.audio.push_back(f.sigma_a / static_cast<double>(n_experts));
    w.text.push_back(f.sigma_t / static_cast<double>(n_experts));
  }
  w.image = {1.0 - f.lambda_v, f.lambda_v};
  return w;
}

enum class ChannelRole { unified, displacement_expert, combination_expert };

/// One source of a fused modality: raw rows of `source` for that modality,
/// optionally remapped by `projector`.
struct Channel {
  std::string source;
  ChannelRole role;
  const ProjectorEnsemble* projector = nullptr;
};

/// The fused space: the unified space, an optional displacement bond into an
/// image-text expert, and any number of combination bonds from audio-text
/// experts, each of which can be switched off.
struct CompositeSpace {
  std::string unified;
  std::optional<BondArtifact> displacement;
  std::vector<BondArtifact> combinations;
  std::vector<bool> selected;
  bool unrepaired_audio = false;  // displaced audio has not been tuned on paired data

  std::size_t n_selected() const {
    std::size_t n = 0;
    for (bool s : selected) n += s ? 1 : 0;
    return n;
  }

  void validate() const {
    if (selected.size() != combinations.size()) throw SpaceBondError("selection mask size mismatch");
    if (displacement && displacement->kind != nn::LossKind::displacement) {
      throw SpaceBondError("displacement slot holds a combination bond");
    }
    for (const auto& c : combinations) {
      if (c.kind != nn::LossKind::combination) throw SpaceBondError("combination slot holds a displacement bond");
    }
  }

  std::vector<Channel> channels(Modality m) const {
    validate();
    const ProjectorEnsemble* psi_u = displacement ? &displacement->ensemble : nullptr;
    std::vector<Channel> out{{unified, ChannelRole::unified, psi_u}};
    if (displacement && m != Modality::audio) {
      out.push_back({displacement->target_space, ChannelRole::displacement_expert, nullptr});
    }
    if (m != Modality::image) {
      for (std::size_t i = 0; i < combinations.size(); ++i) {
        if (selected[i]) {
          out.push_back({combinations[i].source_space, ChannelRole::combination_expert, &combinations[i].ensemble});
        }
      }
    }
    return out;
  }

  /// Weights aligned with channels(m). Without a displacement bond the
  /// expert image/text slots vanish (λ = 0).
  std::vector<double> weights(Modality m, CombiningFactors f) const {
    if (!displacement) f.lambda_v = f.lambda_t = 0.0;
    const auto w = expand_factors(f, n_selected());
    std::vector<double> out = w.of(m);
    if (!displacement && m != Modality::audio) out.erase(out.begin() + 1);
    return out;
  }

  static CompositeSpace of_unified(std::string name) { return CompositeSpace{std::move(name), {}, {}, {}, false}; }
};

inline CompositeSpace select_modules(const CompositeSpace& space, const std::vector<bool>& mask) {
  if (mask.size() != space.combinations.size()) {
    throw SpaceBondError("select_modules: mask has " + std::to_string(mask.size()) + " entries for " +
                         std::to_string(space.combinations.size()) + " experts");
  }
  CompositeSpace out = space;
  out.selected = mask;
  return out;
}

/// Selection by expert space name.
inline CompositeSpace select_modules(const CompositeSpace& space, const std::vector<std::string>& names) {
  std::vector<bool> mask(space.combinations.size(), false);
  for (const auto& n : names) {
    bool found = false;
    for (std::size_t i = 0; i < space.combinations.size(); ++i) {
      if (space.combinations[i].source_space == n) mask[i] = found = true;
    }
    if (!found) throw SpaceBondError("select_modules: no combination bond for expert '" + n + "'");
  }
  return select_modules(space, mask);
}

struct EncodeOptions {
  bool normalize_channels = true;
};

/// Raw embeddings per source space for one modality; rows describe the same
/// items in the same order across sources.
using ChannelInputs = std::map<std::string, Matrix>;

/// Weighted sum of (normalized) channel outputs, renormalized.
inline Matrix encode(const CompositeSpace& space, Modality m, const ChannelInputs& inputs,
                     const CombiningFactors& f, EncodeOptions opts = {}) {
  const auto channels = space.channels(m);
  const auto w = space.weights(m, f);
  if (w.size() != channels.size()) throw SpaceBondError("encode: weight/channel count mismatch");
  std::optional<BasicMatrix<double>> acc;
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (w[c] == 0.0) continue;
    auto it = inputs.find(channels[c].source);
    if (it == inputs.end()) {
      throw SpaceBondError("encode: missing " + std::string(to_string(m)) + " input for channel '" +
                           channels[c].source + "'");
    }
    Matrix out = channels[c].projector ? channels[c].projector->apply(it->second) : it->second;
    if (opts.normalize_channels) out = normalized_rows(std::move(out));
    if (!acc) acc.emplace(out.rows(), out.cols());
    if (acc->rows() != out.rows() || acc->cols() != out.cols()) {
      throw SpaceBondError("encode: channel '" + channels[c].source + "' output shape differs from other channels");
    }
    auto a = acc->flat();
    auto s = out.flat();
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += w[c] * static_cast<double>(s[k]);
  }
  if (!acc) throw SpaceBondError("encode: every channel has zero weight");
  return normalized_rows(acc->cast<float>());
}

}  // namespace spacebond
