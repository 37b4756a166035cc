#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spacebond/embedding_store.hpp"
#include "spacebond/rng.hpp"

namespace spacebond {

enum class SpaceRole { unified, expert };

enum class BondKind { image_text, audio_text };

inline std::string_view to_string(BondKind k) noexcept {
  return k == BondKind::image_text ? "image_text_bond" : "audio_text_bond";
}

/// Names one embedding matrix of a bond: which space, which modality.
/// A tilde (pseudo-pair) matrix is named by the raw source it derives from.
struct SourceRef {
  SpaceRole space;
  Modality modality;
  auto operator<=>(const SourceRef&) const = default;
};

inline std::string describe(SourceRef s) {
  const char* sup = s.space == SpaceRole::unified ? "u" : "x";
  return std::string(1, modality_letter(s.modality)) + "^" + sup;
}

/// One softmax aggregation: weights from cos(query, key) over the key pool,
/// applied to every value pool. Values share the key's modality, so they
/// index the same items and the weight matrix is reused verbatim.
struct AggregationStep {
  SourceRef query;
  SourceRef key;
  std::vector<SourceRef> values;
};

struct AggregationChain {
  Modality anchor;
  std::vector<SourceRef> raw;  // copied directly from the anchor rows
  std::vector<AggregationStep> steps;

  void validate() const {
    if (raw.empty()) throw SpaceBondError("chain has no raw anchor source");
    std::vector<SourceRef> produced = raw;
    for (const auto& r : raw) {
      if (r.modality != anchor) throw SpaceBondError("raw source is not the anchor modality");
    }
    for (std::size_t s = 0; s < steps.size(); ++s) {
      const auto& st = steps[s];
      if (std::find(produced.begin(), produced.end(), st.query) == produced.end()) {
        throw SpaceBondError("step " + std::to_string(s) + " queries an unproduced matrix");
      }
      if (s == 0 && std::find(raw.begin(), raw.end(), st.query) == raw.end()) {
        throw SpaceBondError("first step must query a raw anchor matrix");
      }
      for (const auto& v : st.values) {
        if (v.modality != st.key.modality) {
          throw SpaceBondError("value and key pools must share a modality");
        }
        produced.push_back(v);
      }
    }
  }
};

namespace chains {

constexpr SourceRef U(Modality m) { return {SpaceRole::unified, m}; }
constexpr SourceRef X(Modality m) { return {SpaceRole::expert, m}; }

}  // namespace chains

/// The three collection chains (one per anchor modality) for a bond.
inline std::vector<AggregationChain> build_chain_templates(BondKind kind) {
  using chains::U;
  using chains::X;
  constexpr auto A = Modality::audio;
  constexpr auto V = Modality::image;
  constexpr auto T = Modality::text;
  std::vector<AggregationChain> out;
  switch (kind) {
    case BondKind::image_text:
      out.push_back({T, {X(T), U(T)},
                     {{X(T), X(V), {X(V)}}, {U(T), U(V), {U(V)}}, {U(V), U(A), {U(A)}}}});
      out.push_back({V, {X(V), U(V)},
                     {{X(V), X(T), {X(T)}}, {U(V), U(T), {U(T)}}, {U(V), U(A), {U(A)}}}});
      out.push_back({A, {U(A)},
                     {{U(A), U(V), {U(V), X(V)}}, {U(V), U(T), {U(T), X(T)}}}});
      break;
    case BondKind::audio_text:
      out.push_back({T, {X(T), U(T)},
                     {{X(T), X(A), {X(A), U(A)}}, {U(T), U(V), {U(V)}}}});
      out.push_back({A, {X(A), U(A)},
                     {{X(A), X(T), {X(T), U(T)}}, {U(A), U(V), {U(V)}}}});
      out.push_back({V, {U(V)},
                     {{U(V), U(T), {U(T), X(T)}}, {U(V), U(A), {U(A), X(A)}}}});
      break;
    default:
      throw SpaceBondError("unknown bond kind");
  }
  for (const auto& c : out) c.validate();
  return out;
}

/// Row-softmax of scale·cos(query, keys). scale = 1/temperature; scale 0
/// gives uniform weights.
inline Matrix soft_weights_scaled(const Matrix& query, const Matrix& keys, double scale) {
  if (query.cols() != keys.cols()) throw SpaceBondError("soft_aggregate: query/key dimension mismatch");
  if (keys.rows() == 0) throw SpaceBondError("soft_aggregate: empty key pool");
  const Matrix sim = cosine_similarity(query, keys);
  Matrix w(sim.rows(), sim.cols());
  std::vector<double> logits(sim.cols());
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < sim.cols(); ++j) {
      logits[j] = scale * static_cast<double>(sim(i, j));
      mx = std::max(mx, logits[j]);
    }
    double z = 0.0;
    for (auto& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (std::size_t j = 0; j < sim.cols(); ++j) w(i, j) = static_cast<float>(logits[j] / z);
  }
  return w;
}

inline Matrix soft_weights(const Matrix& query, const Matrix& keys, double temperature) {
  if (!(temperature > 0.0)) throw SpaceBondError("soft_aggregate: temperature must be > 0");
  return soft_weights_scaled(query, keys, 1.0 / temperature);
}

inline Matrix apply_weights(const Matrix& weights, const Matrix& values) {
  if (weights.cols() != values.rows()) throw SpaceBondError("soft_aggregate: key/value row count mismatch");
  return matmul(weights, values);
}

/// softmax(cos(query, keys) / temperature) · values.
inline Matrix soft_aggregate(const Matrix& query, const Matrix& keys, const Matrix& values,
                             double temperature) {
  if (keys.rows() != values.rows()) throw SpaceBondError("soft_aggregate: key/value row count mismatch");
  return apply_weights(soft_weights(query, keys, temperature), values);
}

inline Matrix soft_aggregate_scaled(const Matrix& query, const Matrix& keys, const Matrix& values,
                                    double scale) {
  if (keys.rows() != values.rows()) throw SpaceBondError("soft_aggregate: key/value row count mismatch");
  return apply_weights(soft_weights_scaled(query, keys, scale), values);
}

/// One batch of pseudo multimodal pairs: row i of every matrix is one pair.
struct PseudoPairBatch {
  Modality anchor = Modality::text;
  std::size_t batch_size = 0;
  std::map<SourceRef, Matrix> tilde;
  std::vector<Matrix> step_weights;  // filled only when requested

  const Matrix& get(SpaceRole space, Modality m) const {
    auto it = tilde.find({space, m});
    if (it == tilde.end()) throw SpaceBondError("pseudo-pair batch lacks " + describe({space, m}));
    return it->second;
  }
};

/// Row selections for one batch. Indices address each modality's matrix;
/// the two spaces' matrices of one modality must list the same ids in the
/// same order.
struct BatchPools {
  std::vector<std::size_t> anchor_rows;
  std::map<Modality, std::vector<std::size_t>> pool_rows;
};

namespace detail {

inline const EmbeddingMatrix& pick(const SpaceBundle& unified, const SpaceBundle& expert, SourceRef s) {
  return (s.space == SpaceRole::unified ? unified : expert).at(s.modality);
}

inline void check_aligned(const EmbeddingMatrix& a, const EmbeddingMatrix& b,
                          const std::vector<std::size_t>& rows, const char* what) {
  for (std::size_t r : rows) {
    if (r >= a.n() || r >= b.n()) throw SpaceBondError(std::string(what) + ": row index out of range");
    if (a.ids()[r] != b.ids()[r]) {
      throw SpaceBondError(std::string(what) + ": id misalignment at row " + std::to_string(r) +
                           " ('" + a.ids()[r] + "' vs '" + b.ids()[r] + "')");
    }
  }
}

}  // namespace detail

inline PseudoPairBatch collect_batch(const AggregationChain& chain, const SpaceBundle& unified,
                                     const SpaceBundle& expert, const BatchPools& pools,
                                     double temperature, bool keep_weights = false) {
  if (pools.anchor_rows.empty()) throw SpaceBondError("collect_batch: empty anchor batch");
  PseudoPairBatch batch;
  batch.anchor = chain.anchor;
  batch.batch_size = pools.anchor_rows.size();

  const auto& first_raw = detail::pick(unified, expert, chain.raw.front());
  for (const auto& r : chain.raw) {
    const auto& src = detail::pick(unified, expert, r);
    detail::check_aligned(first_raw, src, pools.anchor_rows, "anchor rows");
    batch.tilde.emplace(r, gather_rows(src.data(), pools.anchor_rows));
  }

  // Gathered pools are shared between steps that read the same source.
  std::map<SourceRef, Matrix> gathered;
  auto pool_of = [&](SourceRef s) -> const Matrix& {
    auto it = gathered.find(s);
    if (it != gathered.end()) return it->second;
    auto pit = pools.pool_rows.find(s.modality);
    if (pit == pools.pool_rows.end()) {
      throw SpaceBondError("collect_batch: no pool for " + std::string(to_string(s.modality)));
    }
    if (pit->second.empty()) throw SpaceBondError("collect_batch: empty candidate pool");
    return gathered.emplace(s, gather_rows(detail::pick(unified, expert, s).data(), pit->second))
        .first->second;
  };

  for (const auto& step : chain.steps) {
    const Matrix& query = batch.tilde.at(step.query);
    const Matrix weights = soft_weights(query, pool_of(step.key), temperature);
    const auto& key_src = detail::pick(unified, expert, step.key);
    for (const auto& v : step.values) {
      if (v != step.key) {
        detail::check_aligned(key_src, detail::pick(unified, expert, v),
                              pools.pool_rows.at(v.modality), "cross-applied pool");
      }
      batch.tilde.insert_or_assign(v, apply_weights(weights, pool_of(v)));
    }
    if (keep_weights) batch.step_weights.push_back(weights);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Batch planning and subset families.

struct CollectionConfig {
  double temperature = 0.01;
  std::size_t batch_size = 256;
  std::size_t pool_size = 256;
  std::vector<Modality> anchors = {Modality::text, Modality::image, Modality::audio};
};

/// Item layout of a bond's sources: row count per modality and whether all
/// modalities list the same items (paired data).
struct SourceLayout {
  std::map<Modality, std::size_t> items;
  bool paired = false;

  static SourceLayout of(const SpaceBundle& unified, const SpaceBundle& expert) {
    SourceLayout layout;
    const std::vector<std::string>* first = nullptr;
    layout.paired = true;
    for (const SpaceBundle* s : {&unified, &expert}) {
      for (const auto& [m, mat] : s->modalities) {
        auto [it, fresh] = layout.items.emplace(m, mat.n());
        if (!fresh && it->second != mat.n()) {
          throw SpaceBondError("modality " + std::string(to_string(m)) +
                               " has different item counts across the bonded spaces");
        }
        if (first == nullptr) first = &mat.ids();
        else if (mat.ids() != *first) layout.paired = false;
      }
    }
    return layout;
  }
};

/// Batches for one anchor modality in one epoch. Anchors are drawn without
/// replacement; pools are windows over a permutation of each modality. For
/// paired data the pool window starts at the batch's own anchors, so with
/// pool_size == batch_size the pool is the batch itself.
inline std::vector<BatchPools> plan_epoch(Modality anchor, const SourceLayout& layout,
                                          const CollectionConfig& cfg, std::uint64_t seed) {
  if (cfg.batch_size == 0) throw SpaceBondError("batch_size must be positive");
  if (cfg.pool_size == 0) throw SpaceBondError("pool_size must be positive");
  const std::size_t n = layout.items.at(anchor);
  if (n == 0) throw SpaceBondError("no items for anchor modality");
  const std::size_t b = std::min(cfg.batch_size, n);
  const std::size_t n_batches = n / b;

  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(anchor) + 1));
  const auto anchor_perm = rng.permutation(n);

  std::map<Modality, std::vector<std::size_t>> perms;
  for (const auto& [m, count] : layout.items) {
    if (layout.paired || m == anchor) {
      perms[m] = anchor_perm;
    } else {
      Rng mrng(derive_seed(seed, static_cast<std::uint64_t>(anchor) + 1, static_cast<std::uint64_t>(m) + 11));
      perms[m] = mrng.permutation(count);
    }
  }

  std::vector<BatchPools> out(n_batches);
  for (std::size_t j = 0; j < n_batches; ++j) {
    auto& bp = out[j];
    bp.anchor_rows.assign(anchor_perm.begin() + static_cast<std::ptrdiff_t>(j * b),
                          anchor_perm.begin() + static_cast<std::ptrdiff_t>((j + 1) * b));
    for (const auto& [m, perm] : perms) {
      const std::size_t size = std::min(cfg.pool_size, perm.size());
      const std::size_t start = (layout.paired || m == anchor) ? j * b : j * size;
      auto& rows = bp.pool_rows[m];
      rows.reserve(size);
      for (std::size_t r = 0; r < size; ++r) rows.push_back(perm[(start + r) % perm.size()]);
    }
  }
  return out;
}

struct BatchRef {
  Modality anchor;
  std::size_t index;
  auto operator<=>(const BatchRef&) const = default;
};

/// Subset name from its anchors, letters in T, V, A order ("TVA", "VA", ...).
inline std::string subset_tag(const std::vector<Modality>& anchors) {
  std::string tag;
  for (Modality m : {Modality::text, Modality::image, Modality::audio}) {
    if (std::find(anchors.begin(), anchors.end(), m) != anchors.end()) tag.push_back(modality_letter(m));
  }
  return tag;
}

inline std::vector<Modality> subset_anchors(const std::string& tag) {
  std::vector<Modality> out;
  for (char c : tag) {
    switch (c) {
      case 'T': out.push_back(Modality::text); break;
      case 'V': out.push_back(Modality::image); break;
      case 'A': out.push_back(Modality::audio); break;
      default: throw SpaceBondError("bad subset tag '" + tag + "'");
    }
  }
  if (out.empty()) throw SpaceBondError("empty subset tag");
  return out;
}

/// All non-empty anchor combinations, in the order T, V, A, TV, TA, VA, TVA.
inline std::vector<std::string> all_subset_tags(const std::vector<Modality>& anchors) {
  std::vector<std::string> singles;
  for (Modality m : {Modality::text, Modality::image, Modality::audio}) {
    if (std::find(anchors.begin(), anchors.end(), m) != anchors.end()) {
      singles.push_back(std::string(1, modality_letter(m)));
    }
  }
  std::vector<std::string> out;
  const std::size_t k = singles.size();
  for (std::size_t size = 1; size <= k; ++size) {
    for (std::size_t mask = 1; mask < (1u << k); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcountll(mask)) != size) continue;
      std::string tag;
      for (std::size_t b = 0; b < k; ++b) {
        if (mask & (1u << b)) tag += singles[b];
      }
      out.push_back(tag);
    }
  }
  return out;
}

/// D_T, D_V, D_A and their unions. Union streams are the concatenation of
/// the member batches in a seeded interleaved order.
struct SubsetFamily {
  std::map<std::string, std::vector<BatchRef>> subsets;
};

inline SubsetFamily build_subset_family(const std::map<Modality, std::size_t>& batches_per_anchor,
                                        std::uint64_t seed) {
  std::vector<Modality> anchors;
  for (const auto& [m, count] : batches_per_anchor) anchors.push_back(m);
  SubsetFamily family;
  for (const auto& tag : all_subset_tags(anchors)) {
    std::vector<BatchRef> refs;
    for (Modality m : subset_anchors(tag)) {
      for (std::size_t i = 0; i < batches_per_anchor.at(m); ++i) refs.push_back({m, i});
    }
    if (tag.size() > 1) {
      Rng rng(derive_seed(seed, fnv1a(tag)));
      rng.shuffle(std::span<BatchRef>(refs));
    }
    family.subsets.emplace(tag, std::move(refs));
  }
  return family;
}

}  // namespace spacebond
