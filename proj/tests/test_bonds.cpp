#include <gtest/gtest.h>

#include "helpers.hpp"
#include "spacebond/bonds.hpp"
#include "spacebond/pipeline.hpp"
#include "spacebond/evaluation.hpp"
#include "spacebond/synthetic.hpp"

using namespace spacebond;

namespace {

constexpr auto A = Modality::audio;
constexpr auto V = Modality::image;
constexpr auto T = Modality::text;

struct SmallWorld {
  SpaceBundle unified, vt, at1, at2;

  SmallWorld() {
    const auto w = synth::generate_world(320, 16, 5);
    unified = normalize_space(synth::realize_space(w, {"unified", 24, {{A, 0.45}, {V, 0.3}, {T, 0.3}}, 1}));
    vt = normalize_space(synth::realize_space(w, {"vt", 20, {{V, 0.1}, {T, 0.1}}, 2}));
    at1 = normalize_space(synth::realize_space(w, {"at1", 18, {{A, 0.1}, {T, 0.15}}, 3}));
    at2 = normalize_space(synth::realize_space(w, {"at2", 22, {{A, 0.15}, {T, 0.1}}, 4}));
  }
};

const SmallWorld& world() {
  static const SmallWorld w;
  return w;
}

BondConfig small_config(std::size_t epochs = 2) {
  BondConfig c;
  c.collection.batch_size = 64;
  c.collection.pool_size = 64;
  c.train.epochs = epochs;
  c.train.hidden = 16;
  c.train.batch_size = 64;
  c.train.seed = 11;
  return c;
}

eval::EvalInputs inputs_of(std::initializer_list<const SpaceBundle*> spaces) {
  eval::EvalInputs in;
  for (const auto* s : spaces) in.sources.emplace(s->name, *s);
  return in;
}

}  // namespace

TEST(Bonds, DisplacementStructureAndDeterminism) {
  const auto& w = world();
  const auto a = train_displacement_bond(w.unified, w.vt, small_config());
  EXPECT_EQ(a.ensemble.size(), 7u);
  EXPECT_EQ(a.ensemble.tags, (std::vector<std::string>{"T", "V", "A", "TV", "TA", "VA", "TVA"}));
  EXPECT_EQ(a.ensemble.d_in(), 24u);
  EXPECT_EQ(a.ensemble.d_out(), 20u);
  EXPECT_EQ(a.direction(), "unified->vt");
  EXPECT_EQ(a.epoch_losses.size(), 7u);
  EXPECT_EQ(a.epoch_losses[0].size(), 2u);
  const auto b = train_displacement_bond(w.unified, w.vt, small_config());
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(a.ensemble.members[i], b.ensemble.members[i]);
}

TEST(Bonds, CombinationStructure) {
  const auto& w = world();
  const auto c = train_combination_bond(w.unified, w.at1, small_config(1));
  EXPECT_EQ(c.ensemble.size(), 7u);
  EXPECT_EQ(c.ensemble.d_in(), 18u);
  EXPECT_EQ(c.ensemble.d_out(), 24u);
  EXPECT_EQ(c.expert(), "at1");
}

TEST(Bonds, SubsetSelectionAndErrors) {
  const auto& w = world();
  auto cfg = small_config(1);
  cfg.subsets = {"TV"};
  EXPECT_EQ(train_displacement_bond(w.unified, w.vt, cfg).ensemble.tags, (std::vector<std::string>{"TV"}));
  cfg.collection.anchors = {T};
  EXPECT_THROW(train_displacement_bond(w.unified, w.vt, cfg), SpaceBondError);
  EXPECT_THROW(train_displacement_bond(w.unified, w.at1, small_config(1)), SpaceBondError);
  EXPECT_THROW(train_combination_bond(w.vt, w.at1, small_config(1)), SpaceBondError);
}

TEST(Bonds, DisplacementHelpsImageText) {
  const auto& w = world();
  const auto bond = train_displacement_bond(w.unified, w.vt, small_config(5));
  CompositeSpace s = CompositeSpace::of_unified("unified");
  s.displacement = bond;
  const auto in = inputs_of({&w.unified, &w.vt});
  const auto fused = eval::evaluate_composite(s, {1, 1, 0, 0}, in);
  const auto base = eval::evaluate_composite(CompositeSpace::of_unified("unified"), {0, 0, 0, 0}, in);
  EXPECT_GE(fused.at("retrieval/image-text", "R@1"), base.at("retrieval/image-text", "R@1"));
}

TEST(Bonds, SaveLoadRoundTrip) {
  const auto& w = world();
  auto cfg = small_config(1);
  cfg.subsets = {"T", "TA"};
  const auto c = train_combination_bond(w.unified, w.at1, cfg);
  testing_util::TempDir tmp("bond");
  save_bond(c, tmp.path() / "at1");
  const auto back = load_bond(tmp.path() / "at1");
  EXPECT_EQ(back.kind, c.kind);
  EXPECT_EQ(back.source_space, "at1");
  EXPECT_EQ(back.target_space, "unified");
  EXPECT_EQ(back.ensemble.tags, c.ensemble.tags);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(back.ensemble.members[i], c.ensemble.members[i]);
  EXPECT_EQ(back.epoch_losses, c.epoch_losses);
  EXPECT_THROW(load_bond(tmp.path() / "missing"), SpaceBondError);
}

TEST(SequentialParallel, ProductStructureAndFrozenStage1) {
  const auto& w = world();
  auto cfg = small_config(1);
  cfg.subsets = {"T"};
  const auto r = compose_sequential_parallel(w.unified, w.vt, {w.at1, w.at2}, cfg, cfg);
  ASSERT_TRUE(r.stage1.has_value());
  ASSERT_EQ(r.space.combinations.size(), 2u);
  const auto expect_stage1 = displacement_product(w.unified, w.vt, *r.space.displacement, "unified");
  EXPECT_EQ(*r.stage1, expect_stage1);
  EXPECT_EQ(r.stage1->at(V), w.vt.at(V));
  EXPECT_EQ(r.stage1->at(T), w.vt.at(T));

  // Each combination bond is independent of its siblings: training alone
  // against the same frozen product gives the same projector.
  const auto alone = compose_sequential_parallel(w.unified, w.vt, {w.at2}, cfg, cfg);
  EXPECT_EQ(alone.space.combinations[0].ensemble.members[0], r.space.combinations[1].ensemble.members[0]);

  std::vector<std::string> text_sources;
  for (const auto& c : r.space.channels(T)) text_sources.push_back(c.source);
  EXPECT_EQ(text_sources, (std::vector<std::string>{"unified", "vt", "at1", "at2"}));
}

TEST(SequentialParallel, NoAudioTextExpertsIsDisplacementOnly) {
  const auto& w = world();
  auto cfg = small_config(1);
  cfg.subsets = {"V"};
  const auto r = compose_sequential_parallel(w.unified, w.vt, {}, cfg, cfg);
  EXPECT_TRUE(r.space.combinations.empty());
  const auto in = inputs_of({&w.unified, &w.vt});
  CompositeSpace d = CompositeSpace::of_unified("unified");
  d.displacement = r.space.displacement;
  EXPECT_EQ(eval::evaluate_composite(r.space, {0.9, 0.9, 0, 0}, in), eval::evaluate_composite(d, {0.9, 0.9, 0, 0}, in));
}

TEST(SequentialParallel, ZeroSigmaCombinationIsUnified) {
  const auto& w = world();
  auto cfg = small_config(1);
  cfg.subsets = {"A"};
  const auto r = compose_sequential_parallel(w.unified, std::nullopt, {w.at1}, cfg, cfg);
  EXPECT_FALSE(r.stage1.has_value());
  const auto in = inputs_of({&w.unified, &w.at1});
  for (Modality m : kAllModalities) {
    const auto fused = eval::encode_modality(r.space, m, in, {0, 0, 0, 0});
    EXPECT_EQ(fused.data(), w.unified.at(m).data()) << to_string(m);
  }
}

TEST(Bonds, AlignmentUsesSharedIds) {
  const auto& w = world();
  SpaceBundle partial{"vt", 20, {}};
  std::vector<std::string> keep(w.vt.at(V).ids().begin(), w.vt.at(V).ids().begin() + 200);
  partial.modalities.emplace(V, w.vt.at(V).select(keep));
  partial.modalities.emplace(T, w.vt.at(T).select(keep));
  const auto [u, x] = detail::align_for_bond(w.unified, partial);
  EXPECT_EQ(u.at(V).n(), 200u);
  EXPECT_EQ(u.at(A).n(), 320u);
  EXPECT_EQ(x.at(T).ids(), u.at(T).ids());
}

TEST(Bonds, StandardDisplacementLossFalls) {
  const auto cfg = pipeline::PipelineConfig::standard();
  const auto w = synth::generate_world(cfg.synth->n_items, cfg.synth->k, derive_seed(cfg.seed, fnv1a("world")));
  auto realize = [&](std::size_t i) {
    const auto& s = cfg.synth->spaces[i];
    return normalize_space(synth::realize_space(w, {s.name, s.dim, s.noise, derive_seed(cfg.seed, fnv1a("space"), fnv1a(s.name))}));
  };
  auto bc = cfg.bond_config(nn::LossKind::displacement);
  bc.subsets = {"TVA"};
  const auto bond = train_displacement_bond(realize(0), realize(1), bc);
  const auto& losses = bond.epoch_losses[0];
  ASSERT_EQ(losses.size(), 5u);
  EXPECT_LT(losses.back(), losses.front());
}
