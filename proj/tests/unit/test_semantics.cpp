#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "zsa/semantics/vectors.hpp"

namespace fs = std::filesystem;
using namespace zsa;
using namespace zsa::semantics;

namespace {
fs::path write_file(const std::string& name, const std::string& body) {
  auto dir = fs::temp_directory_path() / "zsa_semantics_tests";
  fs::create_directories(dir);
  std::ofstream(dir / name, std::ios::binary) << body;
  return dir / name;
}

std::string error_of(const fs::path& p) {
  try {
    load_word_vectors(p);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}
}  // namespace

TEST(WordVectors, LoadsWithAndWithoutHeader) {
  auto a = load_word_vectors(write_file("plain.txt", "dog 1 0 0\ncat 0 1 0\n"));
  EXPECT_EQ(a.size(), 2u);
  EXPECT_EQ(a.dim(), 3u);
  EXPECT_EQ(a["cat"][1], 1.0f);
  auto b = load_word_vectors(write_file("header.txt", "2 3\r\ndog 1 0 0\r\ncat 0 1 0.5\r\n"), "glove");
  EXPECT_EQ(b.size(), 2u);
  EXPECT_EQ(b["cat"][2], 0.5f);
  EXPECT_EQ(b.source(), "glove");
}

TEST(WordVectors, ErrorsNameTheLine) {
  EXPECT_NE(error_of(write_file("dim.txt", "dog 1 0 0\ncat 0 1\n")).find("line 2"), std::string::npos);
  EXPECT_NE(error_of(write_file("nan.txt", "dog 1 x 0\n")).find("line 1"), std::string::npos);
  EXPECT_NE(error_of(write_file("dup.txt", "dog 1 0\ncat 0 1\ndog 1 1\n")).find("duplicate"), std::string::npos);
  EXPECT_NE(error_of(write_file("empty.txt", "")).find("empty"), std::string::npos);
  EXPECT_THROW(load_word_vectors("/nonexistent/vectors.txt"), DataError);
}

TEST(WordVectors, SaveLoadRoundTrip) {
  auto p = write_file("rt.txt", "");
  save_word_vectors(p, {"a", "b"}, {{0.1f, -2.5f}, {1e-7f, 3.0f}});
  auto s = load_word_vectors(p);
  EXPECT_EQ(s["a"][0], 0.1f);
  EXPECT_EQ(s["b"][0], 1e-7f);
}

TEST(Labels, TokenizationLowercasesAndSplits) {
  EXPECT_EQ(tokenize_label("Dog"), (std::vector<std::string>{"dog"}));
  EXPECT_EQ(tokenize_label("Bird vocalization, bird call"),
            (std::vector<std::string>{"bird", "vocalization", "bird", "call"}));
  EXPECT_EQ(tokenize_label("Hi-hat (drum)"), (std::vector<std::string>{"hi", "hat", "drum"}));
}

TEST(Labels, EmbeddingIsMeanOfKnownTokens) {
  VectorStore s(2, "test");
  s.add("dog", {2, 0});
  s.add("bark", {0, 4});
  auto e = embed_label(ClassDescriptor::from_label("c1", "Dog bark"), s);
  EXPECT_EQ(e.embedding.vector, (std::vector<float>{1, 2}));
  EXPECT_TRUE(e.oov.empty());
  auto f = embed_label(ClassDescriptor::from_label("c2", "Dog xylophone"), s);
  EXPECT_EQ(f.embedding.vector, (std::vector<float>{2, 0}));
  EXPECT_EQ(f.oov, (std::vector<std::string>{"xylophone"}));
  try {
    embed_label(ClassDescriptor::from_label("c3", "Zither"), s);
    FAIL();
  } catch (const DataError& err) {
    EXPECT_NE(std::string(err.what()).find("Zither"), std::string::npos);
  }
  EXPECT_THROW(ClassDescriptor::from_label("c4", " , "), DataError);
}

TEST(Cosine, ValuesAndZeroNorm) {
  std::vector<float> a{1, 0}, b{0, 3}, c{2, 0}, z{0, 0};
  EXPECT_EQ(cosine_similarity(a, b), 0.0);
  EXPECT_EQ(cosine_similarity(a, c), 1.0);
  EXPECT_THROW(cosine_similarity(a, z), DataError);
}

TEST(NearestNeighbor, HighestSimilarityTiesToLowestId) {
  SemanticEmbedding q{"q", {1, 0}};
  std::vector<SemanticEmbedding> cands{{"b", {1, 0.5f}}, {"z", {1, 0}}, {"a", {2, 0}}};
  auto n = nearest_neighbor(q, cands);
  EXPECT_EQ(n.class_id, "a");
  EXPECT_DOUBLE_EQ(n.similarity, 1.0);
  EXPECT_THROW(nearest_neighbor(q, {}), ConfigError);
}
