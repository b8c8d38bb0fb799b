#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "support/gradcheck.hpp"
#include "zsa/backbones/backbone.hpp"

namespace fs = std::filesystem;
using namespace zsa;
using namespace zsa::backbones;

namespace {
TransformerConfig tiny_transformer() {
  TransformerConfig c;
  c.patch_freq = 4;
  c.patch_time = 4;
  c.dim = 8;
  c.heads = 2;
  c.layers = 2;
  c.max_freq_patches = 8;
  c.max_time_patches = 16;
  return c;
}

BackboneConfig tiny(BackboneKind kind) {
  BackboneConfig c;
  c.kind = kind;
  c.embed_dim = 6;
  c.transformer = tiny_transformer();
  c.cnn14.channels = {2, 3, 3, 4, 4, 4};
  c.cnn14.fc_dim = 8;
  c.vggish.channels = {2, 2, 3, 3, 4, 4};
  c.vggish.fc_dim = 8;
  return c;
}

template <class T>
Tensor<T> random_spec(Rng& rng, std::size_t f, std::size_t t) {
  Tensor<T> x({f, t});
  for (auto& v : x.values()) v = static_cast<T>(rng.normal());
  return x;
}

void expect_close(const std::vector<float>& a, const std::vector<float>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}
}  // namespace

TEST(Patchify, GridArithmetic) {
  Graph<float> g(false);
  TransformerConfig c = tiny_transformer();
  c.patch_freq = c.patch_time = 16;
  Rng rng(0);
  auto ps = init_transformer<float>(c, 4, rng);
  auto grid = patchify(g, ps, c, Tensor<float>({128, 100}));
  EXPECT_EQ(grid.rows.size(), 8u);
  EXPECT_EQ(grid.cols.size(), 6u);
  EXPECT_EQ(grid.tokens.value().rows(), 48u);
  auto one = patchify(g, ps, c, Tensor<float>({16, 16}));
  EXPECT_EQ(one.size(), 1u);
  EXPECT_THROW(patchify(g, ps, c, Tensor<float>({15, 16})), DataError);
  EXPECT_THROW(patchify(g, ps, c, Tensor<float>({16, 16 * 17})), DataError);
}

TEST(Patchify, ExtractionIsRowMajorAndDropsRemainder) {
  Tensor<double> x({5, 7});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 7; ++j) x(i, j) = 10.0 * i + j;
  auto p = extract_patches(x, 2, 3);
  ASSERT_EQ(p.shape(), (Shape{4, 6}));
  // patch (row 1, col 0) covers bins 2-3, frames 0-2
  EXPECT_EQ(std::vector<double>(p.row(2).begin(), p.row(2).end()), (std::vector<double>{20, 21, 22, 30, 31, 32}));
  EXPECT_EQ(p(1, 0), 3.0);
}

TEST(Patchify, ZeroInputTokensArePositionalVectors) {
  Graph<double> g(false);
  auto c = tiny_transformer();
  Rng rng(1);
  auto ps = init_transformer<double>(c, 4, rng);
  auto grid = patchify(g, ps, c, Tensor<double>({12, 20}));
  const auto& tok = grid.tokens.value();
  const auto& pf = ps.at("pos.freq").value;
  const auto& pt = ps.at("pos.time").value;
  ASSERT_EQ(tok.rows(), 15u);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t col = 0; col < 5; ++col)
      for (std::size_t k = 0; k < c.dim; ++k) EXPECT_EQ(tok(r * 5 + col, k), pf(r, k) + pt(col, k));
}

TEST(Patchout, EvalIsIdentity) {
  Graph<float> g(false);
  auto c = tiny_transformer();
  Rng rng(2);
  auto ps = init_transformer<float>(c, 4, rng);
  auto x = random_spec<float>(rng, 16, 24);
  auto grid = patchify(g, ps, c, x);
  auto out = structured_patchout(grid, PatchoutConfig{2, 3}, Mode::eval, nullptr);
  EXPECT_EQ(out.tokens.value(), grid.tokens.value());
  EXPECT_EQ(out.rows, grid.rows);
}

TEST(Patchout, TokenCountsAndDeterminismOnRandomGrids) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t F = 1 + rng.index(10), Tp = 1 + rng.index(40);
    const PatchoutConfig cfg{rng.index(F), rng.index(Tp)};
    const std::uint64_t seed = rng.index(1u << 30);
    Rng a(seed), b(seed);
    auto s = patchout_select(F, Tp, cfg, Mode::train, &a);
    auto t = patchout_select(F, Tp, cfg, Mode::train, &b);
    ASSERT_EQ(s.rows.size() * s.cols.size(), (F - cfg.n_freq_drop) * (Tp - cfg.n_time_drop));
    ASSERT_EQ(s.rows, t.rows);
    ASSERT_EQ(s.cols, t.cols);
    ASSERT_TRUE(std::is_sorted(s.rows.begin(), s.rows.end()));
    ASSERT_EQ(std::set<std::size_t>(s.cols.begin(), s.cols.end()).size(), s.cols.size());
    ASSERT_TRUE(s.rows.empty() || s.rows.back() < F);
  }
  EXPECT_THROW(patchout_select(4, 6, PatchoutConfig{4, 0}, Mode::train, &rng), ConfigError);
  EXPECT_THROW(patchout_select(4, 6, PatchoutConfig{1, 1}, Mode::train, nullptr), ConfigError);
}

TEST(Patchout, DroppedRowsAreUniform) {
  // Each of 8 rows is dropped with probability 2/8 when two are removed.
  Rng rng(4);
  const int trials = 8000;
  std::vector<int> dropped(8);
  for (int i = 0; i < trials; ++i) {
    auto s = patchout_select(8, 6, PatchoutConfig{2, 0}, Mode::train, &rng);
    std::vector<bool> kept(8);
    for (auto r : s.rows) kept[r] = true;
    for (int r = 0; r < 8; ++r) dropped[r] += !kept[r];
  }
  const double p = 0.25, sigma = std::sqrt(trials * p * (1 - p));
  for (int r = 0; r < 8; ++r) EXPECT_LE(std::abs(dropped[r] - trials * p), 4 * sigma) << "row " << r;
}

TEST(Patchout, SurvivorsKeepTheirPositionalVectors) {
  Graph<double> g(false);
  auto c = tiny_transformer();
  Rng rng(5);
  auto ps = init_transformer<double>(c, 4, rng);
  auto grid = patchify(g, ps, c, random_spec<double>(rng, 32, 40));
  Rng po(6);
  auto out = structured_patchout(grid, PatchoutConfig{2, 3}, Mode::train, &po);
  ASSERT_EQ(out.size(), 6u * 7u);
  for (std::size_t i = 0; i < out.rows.size(); ++i)
    for (std::size_t j = 0; j < out.cols.size(); ++j) {
      const std::size_t src = out.rows[i] * grid.cols.size() + out.cols[j];
      for (std::size_t k = 0; k < c.dim; ++k)
        ASSERT_EQ(out.tokens.value()(i * out.cols.size() + j, k), grid.tokens.value()(src, k));
    }
}

TEST(Transformer, EvalEmbeddingIsDeterministicAndSized) {
  auto cfg = tiny(BackboneKind::transformer);
  Rng rng(7);
  auto bb = make_backbone<float>(cfg, rng);
  auto x = random_spec<float>(rng, 32, 50);
  auto a = embed(bb, x);
  EXPECT_EQ(a.size(), 6u);
  EXPECT_EQ(a, embed(bb, x));
}

TEST(Transformer, InvariantToTokenOrder) {
  auto c = tiny_transformer();
  Rng rng(8);
  auto ps = init_transformer<double>(c, 5, rng);
  Graph<double> g(false);
  auto grid = patchify(g, ps, c, random_spec<double>(rng, 16, 28));
  std::vector<std::size_t> perm(grid.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto base = encode_tokens(g, ps, c, grid.tokens).value();
  for (int trial = 0; trial < 5; ++trial) {
    rng.shuffle(perm.begin(), perm.end());
    auto shuffled = encode_tokens(g, ps, c, ops::take_rows(grid.tokens, perm)).value();
    for (std::size_t k = 0; k < base.size(); ++k) EXPECT_NEAR(shuffled[k], base[k], 1e-12);
  }
}

TEST(Transformer, GradientsMatchFiniteDifferences) {
  auto r = oracle::check_transformer_gradients(11, 100);
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}

TEST(Transformer, GradientsThroughPatchoutMatchFiniteDifferences) {
  auto r = oracle::check_transformer_gradients(12, 60, true);
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}

TEST(Cnn14, ArbitraryLengthsGiveEmbedDims) {
  auto cfg = tiny(BackboneKind::cnn14);
  Rng rng(9);
  auto bb = make_backbone<float>(cfg, rng);
  EXPECT_EQ(embed(bb, random_spec<float>(rng, 128, 64)).size(), 6u);
  EXPECT_EQ(embed(bb, random_spec<float>(rng, 128, 200)).size(), 6u);
  EXPECT_EQ(embed(bb, random_spec<float>(rng, 32, 32)).size(), 6u);
  EXPECT_THROW(embed(bb, random_spec<float>(rng, 32, 31)), DataError);
}

TEST(Cnn14, ZeroInputIsReproducible) {
  auto cfg = tiny(BackboneKind::cnn14);
  Rng r1(10), r2(10);
  auto a = make_backbone<float>(cfg, r1);
  auto b = make_backbone<float>(cfg, r2);
  Tensor<float> zero({64, 64});
  auto ea = embed(a, zero);
  EXPECT_EQ(ea, embed(b, zero));
  for (float v : ea) EXPECT_TRUE(std::isfinite(v));
}

TEST(Cnn14, GradientsMatchFiniteDifferences) {
  BackboneConfig cfg = tiny(BackboneKind::cnn14);
  cfg.cnn14.channels = {2, 2, 2, 2, 2, 2};
  cfg.cnn14.fc_dim = 4;
  cfg.embed_dim = 3;
  Rng rng(13);
  auto ps = init_cnn14<double>(cfg.cnn14, cfg.embed_dim, rng);
  // Random biases and a batch of 3 at 2x2 final resolution keep every ReLU
  // input away from zero; a batch of 2 at 1x1 normalizes to exactly +-1.
  for (auto& [name, p] : ps)
    if (name.find("beta") != std::string::npos || name.find("bias") != std::string::npos)
      for (auto& v : p.value.values()) v = rng.uniform(-0.5, 0.5);
  Tensor<double> x({3, 1, 64, 70});
  for (auto& v : x.values()) v = rng.normal();
  auto forward = [&](Graph<double>& g) {
    auto y = cnn14_forward(g, ps, g.constant(x), Mode::train);
    return ops::matmul(ops::reshape(y, {1, 9}),
                       g.constant(Tensor<double>({9, 1}, {0.7, -1.1, 0.4, 0.2, 0.9, -0.5, 0.3, -0.8, 1.2})));
  };
  // Thousands of ReLU and max units: a small step keeps the probe from
  // crossing a kink.
  auto r = oracle::check_tape_gradients(ps, forward, 13, 60, 1e-7);
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}

TEST(Vggish, ChunkRule) {
  auto cfg = tiny(BackboneKind::vggish);
  Rng rng(14);
  auto bb = make_backbone<float>(cfg, rng);
  auto x = random_spec<float>(rng, 64, 200);
  auto chunks = vggish_chunks(x, cfg.vggish);
  ASSERT_EQ(chunks.size(), 2u);
  auto e0 = embed(bb, chunks[0]);
  auto e1 = embed(bb, chunks[1]);
  EXPECT_EQ(embed(bb, chunks[0]).size(), 6u);

  Tensor<float> x192({64, 192});
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = 0; j < 192; ++j) x192(i, j) = x(i, j);
  auto e192 = embed(bb, x192);
  std::vector<float> mean(6);
  for (std::size_t k = 0; k < 6; ++k) mean[k] = (e0[k] + e1[k]) / 2;
  expect_close(e192, mean, 1e-6);
  EXPECT_EQ(embed(bb, x), e192);
}

TEST(Vggish, RepeatedChunksEqualOneChunk) {
  auto cfg = tiny(BackboneKind::vggish);
  Rng rng(15);
  auto bb = make_backbone<float>(cfg, rng);
  auto one = random_spec<float>(rng, 64, 96);
  Tensor<float> three({64, 288});
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = 0; j < 288; ++j) three(i, j) = one(i, j % 96);
  expect_close(embed(bb, three), embed(bb, one), 1e-6);
}

TEST(Vggish, InputErrors) {
  auto cfg = tiny(BackboneKind::vggish);
  Rng rng(16);
  auto bb = make_backbone<float>(cfg, rng);
  EXPECT_THROW(embed(bb, Tensor<float>({64, 95})), DataError);
  EXPECT_THROW(embed(bb, Tensor<float>({32, 96})), DataError);
}

TEST(Vggish, GradientsMatchFiniteDifferences) {
  VggishConfig c;
  c.channels = {1, 2, 2, 2, 2, 2};
  c.fc_dim = 4;
  c.mel_bins = 16;
  c.chunk_frames = 32;
  Rng rng(17);
  auto ps = init_vggish<double>(c, 2, rng);
  Tensor<double> x({2, 1, 16, 32});
  for (auto& v : x.values()) v = rng.normal();
  auto forward = [&](Graph<double>& g) {
    auto y = vggish_forward(g, ps, c, g.constant(x), Mode::train);
    auto pooled = ops::segment_mean_rows(y, {2});
    return ops::matmul(pooled, g.constant(Tensor<double>({2, 1}, {0.8, -0.6})));
  };
  auto r = oracle::check_tape_gradients(ps, forward, 17, 60, 1e-7);
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}

TEST(Backbone, BatchEmbeddingMatchesSingleClips) {
  for (auto kind : {BackboneKind::transformer, BackboneKind::vggish}) {
    auto cfg = tiny(kind);
    cfg.transformer.max_freq_patches = 16;
    cfg.transformer.max_time_patches = 48;
    Rng rng(18);
    auto bb = make_backbone<float>(cfg, rng);
    auto a = random_spec<float>(rng, 64, 96), b = random_spec<float>(rng, 64, 192);
    Graph<float> g(false);
    auto batch = embed_batch(g, bb, {&a, &b}, Mode::eval, nullptr).value();
    ASSERT_EQ(batch.shape(), (Shape{2, 6}));
    auto ea = embed(bb, a), eb = embed(bb, b);
    for (std::size_t k = 0; k < 6; ++k) {
      EXPECT_NEAR(batch(0, k), ea[k], 1e-5);
      EXPECT_NEAR(batch(1, k), eb[k], 1e-5);
    }
  }
}

TEST(Backbone, CheckpointRoundTripAndKindGuard) {
  auto dir = fs::temp_directory_path() / "zsa_backbone_tests";
  fs::create_directories(dir);
  for (auto kind : {BackboneKind::transformer, BackboneKind::cnn14, BackboneKind::vggish}) {
    auto cfg = tiny(kind);
    Rng rng(19);
    auto bb = make_backbone<float>(cfg, rng);
    const auto path = dir / (to_string(kind) + ".ck");
    save_checkpoint(backbone_checkpoint(bb, {{"epochs", 3}}), path);
    auto ck = load_checkpoint(path);
    EXPECT_EQ(ck.hyper["epochs"], 3);
    auto back = backbone_from_checkpoint(ck, kind);
    EXPECT_EQ(back.config, cfg);
    EXPECT_TRUE(back.params == bb.params);
  }
  auto ck = load_checkpoint(dir / "transformer.ck");
  try {
    backbone_from_checkpoint(ck, BackboneKind::cnn14);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("kind mismatch"), std::string::npos);
  }
}

TEST(Backbone, ConfigJsonAndKindParsing) {
  auto cfg = tiny(BackboneKind::cnn14);
  nlohmann::json j = cfg;
  EXPECT_EQ(j.get<BackboneConfig>(), cfg);
  EXPECT_EQ(parse_backbone_kind("passt"), BackboneKind::transformer);
  EXPECT_THROW(parse_backbone_kind("resnet"), ConfigError);
  cfg.transformer.heads = 3;
  cfg.kind = BackboneKind::transformer;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
