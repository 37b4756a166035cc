#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "spacebond/fused.hpp"
#include "spacebond/pseudo_pairs.hpp"

namespace spacebond {

struct BondConfig {
  CollectionConfig collection;
  nn::TrainConfig train;
  std::vector<std::string> subsets;  // empty: every combination of the anchors
};

namespace detail {

/// Restricts both spaces to the items they share per modality, in the
/// unified space's order. Modalities only the unified space has are kept
/// whole.
inline std::pair<SpaceBundle, SpaceBundle> align_for_bond(const SpaceBundle& unified, const SpaceBundle& expert) {
  SpaceBundle u{unified.name, unified.dim, {}};
  SpaceBundle x{expert.name, expert.dim, {}};
  for (const auto& [m, umat] : unified.modalities) {
    if (!expert.has(m)) {
      u.modalities.emplace(m, umat);
      continue;
    }
    const auto& xmat = expert.at(m);
    std::vector<std::string> shared;
    for (const auto& id : umat.ids()) {
      if (xmat.find(id)) shared.push_back(id);
    }
    if (shared.empty()) {
      throw SpaceBondError("no shared " + std::string(to_string(m)) + " ids between '" + unified.name + "' and '" +
                           expert.name + "'");
    }
    u.modalities.emplace(m, shared.size() == umat.n() ? umat : umat.select(shared));
    x.modalities.emplace(m, xmat.select(shared));
  }
  for (const auto& [m, xmat] : expert.modalities) {
    if (!unified.has(m)) {
      throw SpaceBondError("expert modality " + std::string(to_string(m)) + " missing from unified space '" +
                           unified.name + "'");
    }
  }
  return {std::move(u), std::move(x)};
}

}  // namespace detail

/// Trains one projector per pseudo-pair subset and returns the ensemble.
/// Displacement: ψ maps unified → expert. Combination: ψ maps expert → unified.
inline BondArtifact train_bond(nn::LossKind kind, const SpaceBundle& unified, const SpaceBundle& expert,
                               const BondConfig& cfg) {
  const BondKind bond_kind = kind == nn::LossKind::displacement ? BondKind::image_text : BondKind::audio_text;
  require_unified(unified);
  if (bond_kind == BondKind::image_text) require_expert(expert, Modality::image, Modality::text);
  else require_expert(expert, Modality::audio, Modality::text);
  if (cfg.collection.anchors.empty()) throw SpaceBondError("bond needs at least one anchor modality");

  const auto [u, x] = detail::align_for_bond(unified, expert);
  const auto layout = SourceLayout::of(u, x);

  std::map<Modality, AggregationChain> chains;
  for (auto& c : build_chain_templates(bond_kind)) {
    if (std::find(cfg.collection.anchors.begin(), cfg.collection.anchors.end(), c.anchor) !=
        cfg.collection.anchors.end()) {
      chains.emplace(c.anchor, std::move(c));
    }
  }
  std::vector<Modality> anchors;
  for (const auto& [m, c] : chains) anchors.push_back(m);
  const auto tags = cfg.subsets.empty() ? all_subset_tags(anchors) : cfg.subsets;
  for (const auto& tag : tags) {
    for (Modality m : subset_anchors(tag)) {
      if (!chains.count(m)) throw SpaceBondError("subset '" + tag + "' uses an anchor that is not enabled");
    }
  }

  const std::size_t d_in = kind == nn::LossKind::displacement ? u.dim : x.dim;
  const std::size_t d_out = kind == nn::LossKind::displacement ? x.dim : u.dim;
  const std::uint64_t data_seed = derive_seed(cfg.train.seed, fnv1a("pseudo-pairs"));

  BondArtifact artifact;
  artifact.kind = kind;
  artifact.source_space = kind == nn::LossKind::displacement ? unified.name : expert.name;
  artifact.target_space = kind == nn::LossKind::displacement ? expert.name : unified.name;

  for (const auto& tag : tags) {
    // Batches depend only on the epoch, so D_TV is literally D_T ∪ D_V.
    nn::EpochStream stream = [&](std::size_t epoch, const nn::BatchSink& sink) {
      const std::uint64_t epoch_seed = derive_seed(data_seed, epoch);
      std::map<Modality, std::vector<BatchPools>> plans;
      std::map<Modality, std::size_t> counts;
      for (const auto& [m, c] : chains) {
        plans[m] = plan_epoch(m, layout, cfg.collection, epoch_seed);
        counts[m] = plans[m].size();
      }
      const auto family = build_subset_family(counts, epoch_seed);
      for (const auto& ref : family.subsets.at(tag)) {
        sink(collect_batch(chains.at(ref.anchor), u, x, plans.at(ref.anchor)[ref.index], cfg.collection.temperature));
      }
    };
    nn::TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.train.seed, fnv1a("projector"), fnv1a(tag));
    auto result = nn::train_projector(stream, kind, d_in, d_out, tc);
    artifact.ensemble.members.push_back(std::move(result.projector));
    artifact.ensemble.tags.push_back(tag);
    artifact.epoch_losses.push_back(std::move(result.epoch_losses));
  }
  artifact.ensemble.validate();
  return artifact;
}

inline BondArtifact train_displacement_bond(const SpaceBundle& unified, const SpaceBundle& expert,
                                            const BondConfig& cfg) {
  return train_bond(nn::LossKind::displacement, unified, expert, cfg);
}

inline BondArtifact train_combination_bond(const SpaceBundle& unified, const SpaceBundle& expert,
                                           const BondConfig& cfg) {
  return train_bond(nn::LossKind::combination, unified, expert, cfg);
}

/// The displacement product at λ = (1, 1): Ψᵘ-remapped audio with the
/// expert's raw image and text. This is the frozen space that stage-2
/// combination bonds align to.
inline SpaceBundle displacement_product(const SpaceBundle& unified, const SpaceBundle& expert,
                                        const BondArtifact& displacement, std::string name) {
  SpaceBundle out{std::move(name), expert.dim, {}};
  const auto& audio = unified.at(Modality::audio);
  out.modalities.emplace(Modality::audio,
                         EmbeddingMatrix(audio.ids(), displacement.ensemble.apply(audio.data())));
  out.modalities.emplace(Modality::image, expert.at(Modality::image));
  out.modalities.emplace(Modality::text, expert.at(Modality::text));
  out.validate();
  return out;
}

struct SequentialParallelResult {
  CompositeSpace space;
  std::optional<SpaceBundle> stage1;  // frozen space the combination bonds were trained against
};

/// Stage 1 displaces the unified space into the image-text expert; stage 2
/// trains one combination bond per audio-text expert against the frozen
/// stage-1 product. Each bond's seed depends on its expert's name only, so
/// the stage-2 order does not matter.
inline SequentialParallelResult compose_sequential_parallel(const SpaceBundle& unified,
                                                            const std::optional<SpaceBundle>& vt_expert,
                                                            const std::vector<SpaceBundle>& at_experts,
                                                            const BondConfig& displacement_cfg,
                                                            const BondConfig& combination_cfg) {
  SequentialParallelResult out{CompositeSpace::of_unified(unified.name), std::nullopt};
  const SpaceBundle* stage2_target = &unified;
  if (vt_expert) {
    BondConfig cfg = displacement_cfg;
    cfg.train.seed = derive_seed(displacement_cfg.train.seed, fnv1a(vt_expert->name));
    out.space.displacement = train_displacement_bond(unified, *vt_expert, cfg);
    out.stage1 = displacement_product(unified, *vt_expert, *out.space.displacement, unified.name);
    out.space.unrepaired_audio = true;
    stage2_target = &*out.stage1;
  }
  for (const auto& at : at_experts) {
    BondConfig cfg = combination_cfg;
    cfg.train.seed = derive_seed(combination_cfg.train.seed, fnv1a(at.name));
    out.space.combinations.push_back(train_combination_bond(*stage2_target, at, cfg));
    out.space.selected.push_back(true);
  }
  return out;
}

}  // namespace spacebond
