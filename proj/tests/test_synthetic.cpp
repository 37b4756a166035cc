#include <gtest/gtest.h>

#include "spacebond/evaluation.hpp"
#include "spacebond/synthetic.hpp"

using namespace spacebond;
using namespace spacebond::synth;

namespace {

double intra_r1(const SpaceBundle& s, Modality q, Modality g) {
  return eval::recall_at_k(eval::RetrievalTask::by_id(s.at(q), s.at(g), {1})).at(1);
}

}  // namespace

TEST(World, UnitRowsAndDeterminism) {
  const auto w = generate_world(2000, 64, 7);
  ASSERT_EQ(w.n(), 2000u);
  ASSERT_EQ(w.k(), 64u);
  for (std::size_t i = 0; i < w.n(); ++i) EXPECT_NEAR(row_norm<float>(w.latents.row(i)), 1.0, 1e-6);
  EXPECT_EQ(generate_world(2000, 64, 7).latents, w.latents);
  EXPECT_FALSE(generate_world(2000, 64, 8).latents == w.latents);
  EXPECT_EQ(w.ids.front(), "item000000");
  EXPECT_THROW(generate_world(1, 64, 7), SpaceBondError);
}

TEST(Realize, ZeroNoiseModalitiesCoincide) {
  const auto w = generate_world(200, 16, 1);
  const auto s = realize_space(w, {"x", 24, {{Modality::audio, 0.0}, {Modality::text, 0.0}}, 5});
  EXPECT_EQ(s.at(Modality::audio).data(), s.at(Modality::text).data());
  EXPECT_DOUBLE_EQ(intra_r1(s, Modality::audio, Modality::text), 1.0);
}

TEST(Realize, Reproducible) {
  const auto w = generate_world(100, 16, 1);
  const SpaceSpec spec{"x", 32, {{Modality::image, 0.2}, {Modality::text, 0.3}}, 99};
  EXPECT_EQ(realize_space(w, spec), realize_space(w, spec));
  auto other = spec;
  other.seed = 100;
  EXPECT_FALSE(realize_space(w, other) == realize_space(w, spec));
}

TEST(Realize, RejectsBadSpecs) {
  const auto w = generate_world(10, 16, 1);
  EXPECT_THROW(realize_space(w, {"x", 8, {{Modality::text, 0.1}}, 1}), SpaceBondError);
  EXPECT_THROW(realize_space(w, {"x", 16, {}, 1}), SpaceBondError);
  EXPECT_THROW(realize_space(w, {"x", 16, {{Modality::text, -0.1}}, 1}), SpaceBondError);
}

TEST(Realize, LowNoiseExpertBeatsNoisyUnified) {
  const auto w = generate_world(500, 64, 7);
  const auto expert = realize_space(w, {"at", 80, {{Modality::audio, 0.1}, {Modality::text, 0.1}}, 11});
  const auto unified =
      realize_space(w, {"u", 96, {{Modality::audio, 0.5}, {Modality::image, 0.5}, {Modality::text, 0.5}}, 12});
  EXPECT_GT(intra_r1(expert, Modality::audio, Modality::text), intra_r1(unified, Modality::audio, Modality::text));
}

TEST(Realize, MoreNoiseNeverHelpsOnAverage) {
  const std::vector<double> sigmas = {0.05, 0.1, 0.15, 0.2};
  std::vector<double> mean(sigmas.size(), 0.0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto w = generate_world(300, 32, seed);
    for (std::size_t s = 0; s < sigmas.size(); ++s) {
      const auto sp = realize_space(w, {"x", 48, {{Modality::audio, sigmas[s]}, {Modality::text, 0.05}}, seed + 100});
      mean[s] += intra_r1(sp, Modality::audio, Modality::text) / 5.0;
    }
  }
  for (std::size_t s = 1; s < sigmas.size(); ++s) EXPECT_LE(mean[s], mean[s - 1]);
}

TEST(Orthonormal, ColumnsAreOrthonormal) {
  const auto q = orthonormal_columns(20, 8, 3);
  for (std::size_t a = 0; a < 8; ++a) {
    for (std::size_t b = 0; b < 8; ++b) {
      double dot = 0.0;
      for (std::size_t r = 0; r < 20; ++r) dot += q(r, a) * q(r, b);
      EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-12);
    }
  }
}
