#include <gtest/gtest.h>

#include "helpers.hpp"
#include "spacebond/matrix.hpp"
#include "spacebond/rng.hpp"

using namespace spacebond;

TEST(Matrix, LiteralAndAccess) {
  Matrix m{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6.0f);
  EXPECT_THROW((Matrix{{1, 2}, {3}}), SpaceBondError);
  EXPECT_THROW(Matrix(2, 2, std::vector<float>(3)), SpaceBondError);
}

TEST(Matrix, MatmulVariantsAgree) {
  const auto a = testing_util::random_matrix(5, 7, 1).cast<double>();
  const auto b = testing_util::random_matrix(7, 3, 2).cast<double>();
  const auto c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < 7; ++p) s += a(i, p) * b(p, j);
      EXPECT_NEAR(c(i, j), s, 1e-12);
    }
  }
  EXPECT_EQ(matmul_bt(a, transpose(b)), c);
  const auto at = matmul_at(transpose(a), b);
  for (std::size_t k = 0; k < c.flat().size(); ++k) EXPECT_NEAR(at.flat()[k], c.flat()[k], 1e-12);
  EXPECT_THROW(matmul(a, a), SpaceBondError);
}

TEST(Matrix, NormalizedRowsRejectsZeroRow) {
  Matrix m{{3, 4}, {0, 0}};
  EXPECT_THROW(normalized_rows(m), SpaceBondError);
}

TEST(Matrix, GatherRows) {
  Matrix m{{1, 1}, {2, 2}, {3, 3}};
  const std::vector<std::size_t> idx = {2, 0, 2};
  const auto g = gather_rows(m, std::span<const std::size_t>(idx));
  EXPECT_EQ(g, (Matrix{{3, 3}, {1, 1}, {3, 3}}));
  const std::vector<std::size_t> bad = {3};
  EXPECT_THROW(gather_rows(m, std::span<const std::size_t>(bad)), SpaceBondError);
}

TEST(Rng, SeedDerivationIsStableAndSeparates) {
  EXPECT_EQ(derive_seed(7, fnv1a("world")), derive_seed(7, fnv1a("world")));
  EXPECT_NE(derive_seed(7, fnv1a("world")), derive_seed(8, fnv1a("world")));
  EXPECT_NE(derive_seed(7, fnv1a("world")), derive_seed(7, fnv1a("split")));
  EXPECT_EQ(derive_seed(7, 1, 2), derive_seed(derive_seed(7, 1), 2));
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Rng, StreamsReproduce) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.normal(), b.normal());
    EXPECT_EQ(a.below(17), b.below(17));
  }
}

TEST(Rng, PermutationIsPermutation) {
  Rng r(3);
  auto p = r.permutation(50);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(p[i], i);
}

TEST(Rng, NormalMoments) {
  Rng r(9);
  double s = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    sq += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}
