#include <gtest/gtest.h>

#include "helpers.hpp"
#include "spacebond/embedding_store.hpp"

using namespace spacebond;
using testing_util::TempDir;

namespace {

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const SpaceBondError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(EmbeddingMatrix, RejectsBadConstruction) {
  EXPECT_THROW(EmbeddingMatrix({"a"}, Matrix{{1, 2}, {3, 4}}), SpaceBondError);
  EXPECT_THROW(EmbeddingMatrix({"a", "a"}, Matrix{{1, 2}, {3, 4}}), SpaceBondError);
  EXPECT_THROW(EmbeddingMatrix({"a"}, Matrix{{1, NAN}}), SpaceBondError);
  EXPECT_THROW(EmbeddingMatrix({"a"}, Matrix{{1, INFINITY}}), SpaceBondError);
}

TEST(EmbeddingMatrix, SelectByIds) {
  EmbeddingMatrix m({"x", "y", "z"}, Matrix{{1, 0}, {0, 1}, {1, 1}});
  const auto s = m.select({"z", "x"});
  EXPECT_EQ(s.ids(), (std::vector<std::string>{"z", "x"}));
  EXPECT_EQ(s.data(), (Matrix{{1, 1}, {1, 0}}));
  EXPECT_THROW(m.select({"q"}), SpaceBondError);
}

TEST(SpaceBundle, ValidateAndRoles) {
  SpaceBundle empty{"e", 4, {}};
  EXPECT_EQ(error_of([&] { empty.validate(); }), "space has no modalities");

  SpaceBundle s{"s", 2, {}};
  s.modalities.emplace(Modality::text, EmbeddingMatrix({"a"}, Matrix{{1, 0}}));
  s.modalities.emplace(Modality::image, EmbeddingMatrix({"a"}, Matrix{{1, 0, 0}}));
  EXPECT_THROW(s.validate(), SpaceBondError);

  SpaceBundle e{"e", 2, {}};
  e.modalities.emplace(Modality::text, EmbeddingMatrix({"a"}, Matrix{{1, 0}}));
  e.modalities.emplace(Modality::audio, EmbeddingMatrix({"a"}, Matrix{{0, 1}}));
  EXPECT_NO_THROW(require_expert(e, Modality::audio, Modality::text));
  EXPECT_THROW(require_expert(e, Modality::image, Modality::text), SpaceBondError);
  EXPECT_THROW(require_unified(e), SpaceBondError);
}

TEST(Normalize, HandExamples) {
  const auto a = normalized_rows(Matrix{{3, 4}});
  EXPECT_FLOAT_EQ(a(0, 0), 0.6f);
  EXPECT_FLOAT_EQ(a(0, 1), 0.8f);
  EXPECT_EQ(normalized_rows(Matrix{{1, 0}, {0, 2}}), (Matrix{{1, 0}, {0, 1}}));
  const auto u = testing_util::random_unit_rows(20, 9, 5);
  const auto uu = normalized_rows(u);
  for (std::size_t k = 0; k < u.flat().size(); ++k) EXPECT_NEAR(uu.flat()[k], u.flat()[k], 1e-7);
}

TEST(Cosine, HandExamples) {
  EXPECT_EQ(cosine_similarity(Matrix{{1, 0}}, Matrix{{1, 0}, {0, 1}}), (Matrix{{1, 0}}));
  EXPECT_NEAR(cosine_similarity(Matrix{{1, 1}}, Matrix{{1, 0}})(0, 0), 0.70711, 1e-5);
  const Matrix eye{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  EXPECT_EQ(cosine_similarity(eye, eye), eye);
  EXPECT_THROW(cosine_similarity(Matrix{{1, 0}}, Matrix{{1, 0, 0}}), SpaceBondError);
}

TEST(Format, PayloadBytesAreLittleEndianFloats) {
  const auto bytes = io::encode_embedding(EmbeddingMatrix({"only"}, Matrix{{3, 4}}));
  ASSERT_GE(bytes.size(), 24u);
  EXPECT_EQ(bytes.substr(0, 4), "EMB1");
  // 3.0f = 0x40400000, 4.0f = 0x40800000
  const std::string expected_payload("\x00\x00\x40\x40\x00\x00\x80\x40", 8);
  EXPECT_EQ(bytes.substr(16, 8), expected_payload);
  EXPECT_EQ(bytes.substr(24), "only\n");
}

TEST(Format, HeaderCountMismatchIsReported) {
  EmbeddingMatrix three(testing_util::ids(3), testing_util::random_matrix(3, 4, 1));
  auto bytes = io::encode_embedding(three);
  bytes[8] = 2;  // header now claims n=2 while 3 rows follow
  EXPECT_NE(error_of([&] { io::decode_embedding(bytes, "t"); }).find("payload size mismatch"), std::string::npos);

  auto truncated = io::encode_embedding(three).substr(0, 30);
  EXPECT_NE(error_of([&] { io::decode_embedding(truncated, "t"); }).find("payload size mismatch"), std::string::npos);

  auto bad_magic = io::encode_embedding(three);
  bad_magic[0] = 'X';
  EXPECT_NE(error_of([&] { io::decode_embedding(bad_magic, "t"); }).find("malformed header"), std::string::npos);

  auto bad_version = io::encode_embedding(three);
  bad_version[4] = 9;
  EXPECT_NE(error_of([&] { io::decode_embedding(bad_version, "t"); }).find("malformed header"), std::string::npos);
}

TEST(Format, RoundTripRandomIsBitwise) {
  TempDir tmp("store");
  EmbeddingMatrix m(testing_util::ids(100), testing_util::random_matrix(100, 64, 11));
  save_embedding(m, tmp.path() / "m.emb");
  EXPECT_EQ(load_embedding(tmp.path() / "m.emb"), m);
}

TEST(Format, SpaceRoundTrip) {
  TempDir tmp("space");
  SpaceBundle s{"unified", 4, {}};
  s.modalities.emplace(Modality::text, EmbeddingMatrix(testing_util::ids(3), testing_util::random_matrix(3, 4, 2)));
  s.modalities.emplace(Modality::audio, EmbeddingMatrix(testing_util::ids(3), testing_util::random_matrix(3, 4, 3)));
  save_space(s, tmp.path() / "u");
  const auto back = load_space(tmp.path() / "u");
  EXPECT_EQ(back, s);
  EXPECT_EQ(back.dim, 4u);
  EXPECT_EQ(back.at(Modality::text).n(), 3u);

  const auto normed = load_space(tmp.path() / "u" / "manifest.json", {.normalize = true});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(row_norm<float>(normed.at(Modality::audio).data().row(i)), 1.0, 1e-6);

  SpaceBundle empty{"e", 4, {}};
  EXPECT_EQ(error_of([&] { save_space(empty, tmp.path() / "e"); }), "space has no modalities");
}

TEST(Format, ManifestDimensionMismatch) {
  TempDir tmp("dim");
  SpaceBundle s{"x", 4, {}};
  s.modalities.emplace(Modality::text, EmbeddingMatrix(testing_util::ids(2), testing_util::random_matrix(2, 4, 2)));
  save_space(s, tmp.path());
  io::write_file(tmp.path() / "manifest.json", R"({"name":"x","dim":5,"modalities":{"text":"text.emb"}})");
  EXPECT_NE(error_of([&] { load_space(tmp.path()); }).find("dimension mismatch"), std::string::npos);
  io::write_file(tmp.path() / "manifest.json", R"({"name":"x","dim":4,"modalities":{"smell":"text.emb"}})");
  EXPECT_THROW(load_space(tmp.path()), SpaceBondError);
  io::write_file(tmp.path() / "manifest.json", "{not json");
  EXPECT_NE(error_of([&] { load_space(tmp.path()); }).find("malformed manifest"), std::string::npos);
  EXPECT_THROW(load_space(tmp.path() / "nowhere"), SpaceBondError);
}
