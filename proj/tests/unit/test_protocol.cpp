#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "zsa/protocol/classes.hpp"
#include "zsa/protocol/manifest.hpp"
#include "zsa/protocol/sampler.hpp"

namespace fs = std::filesystem;
using namespace zsa;
using namespace zsa::protocol;

namespace {
TagCountTable table(const std::vector<std::pair<std::string, std::uint64_t>>& counts) {
  TagCountTable t;
  for (const auto& [id, c] : counts) t.classes.push_back({id, id, c});
  return t;
}

fs::path temp_file(const std::string& name, const std::string& body) {
  auto dir = fs::temp_directory_path() / "zsa_protocol_tests";
  fs::create_directories(dir);
  std::ofstream(dir / name) << body;
  return dir / name;
}
}  // namespace

TEST(Folds, HandExecutedGreedyExample) {
  auto s = balance_folds(table({{"A", 10}, {"B", 8}, {"C", 6}, {"D", 4}, {"E", 2}}), 2, {});
  EXPECT_EQ(s.folds[0].class_ids, (std::vector<std::string>{"A", "D", "E"}));
  EXPECT_EQ(s.folds[1].class_ids, (std::vector<std::string>{"B", "C"}));
  EXPECT_EQ(s.folds[0].total, 16u);
  EXPECT_EQ(s.folds[1].total, 14u);
}

TEST(Folds, SymmetricCountsSpreadEvenly) {
  auto s = balance_folds(table({{"a", 5}, {"b", 5}, {"c", 5}, {"d", 5}, {"e", 5}, {"f", 5}}), 3, {});
  for (const auto& f : s.folds) {
    EXPECT_EQ(f.class_ids.size(), 2u);
    EXPECT_EQ(f.total, 10u);
  }
  // equal counts are visited alphabetically, equal totals go to the lowest fold
  EXPECT_EQ(s.folds[0].class_ids, (std::vector<std::string>{"a", "d"}));
}

TEST(Folds, PinnedClassesNeverAssigned) {
  auto s = balance_folds(table({{"Speech", 100}, {"Music", 90}, {"a", 3}, {"b", 2}}), 2, {"Speech", "Music"});
  for (const auto& f : s.folds)
    for (const auto& id : f.class_ids) EXPECT_TRUE(id != "Speech" && id != "Music");
  EXPECT_EQ(s.pinned, (std::vector<std::string>{"Music", "Speech"}));
}

TEST(Folds, Errors) {
  EXPECT_THROW(balance_folds(table({{"a", 1}, {"b", 1}}), 3, {}), ConfigError);
  EXPECT_THROW(balance_folds(table({{"a", 1}, {"b", 1}}), 1, {}), ConfigError);
  EXPECT_THROW(balance_folds(table({{"a", 1}, {"b", 1}}), 2, {"zz"}), ConfigError);
}

TEST(Folds, BalanceBoundAndPartitionOnRandomTables) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.index(60);
    const std::size_t k = 2 + rng.index(std::min<std::size_t>(n - 1, 8));
    std::vector<std::pair<std::string, std::uint64_t>> counts;
    std::uint64_t max_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = rng.bernoulli(0.2) ? rng.index(100000) : rng.index(50);
      counts.emplace_back("c" + std::to_string(i), c);
      max_count = std::max<std::uint64_t>(max_count, c);
    }
    auto s = balance_folds(table(counts), k, {});
    std::uint64_t lo = UINT64_MAX, hi = 0;
    std::multiset<std::string> seen;
    for (const auto& f : s.folds) {
      std::uint64_t total = 0;
      for (const auto& id : f.class_ids) {
        seen.insert(id);
        total += std::find_if(counts.begin(), counts.end(), [&](auto& c) { return c.first == id; })->second;
      }
      ASSERT_EQ(total, f.total);
      lo = std::min(lo, total);
      hi = std::max(hi, total);
    }
    ASSERT_LE(hi - lo, max_count);
    ASSERT_EQ(seen.size(), n);
    ASSERT_EQ(std::set<std::string>(seen.begin(), seen.end()).size(), n);
  }
}

TEST(Folds, JsonRoundTrip) {
  auto s = balance_folds(table({{"A", 10}, {"B", 8}, {"C", 6}}), 2, {});
  auto back = FoldSplit::from_json(s.to_json());
  EXPECT_EQ(back.folds[0].class_ids, s.folds[0].class_ids);
  EXPECT_EQ(back.folds[1].total, s.folds[1].total);
}

TEST(ClassTable, CsvRoundTripWithQuotedLabels) {
  TagCountTable t;
  t.classes = {{"/m/01", "Dog", 12}, {"/m/02", "Bird vocalization, bird call", 3}};
  auto p = temp_file("counts.csv", "");
  write_class_table(p, t);
  auto back = read_class_table(p);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.classes[1].label, "Bird vocalization, bird call");
  EXPECT_EQ(back.classes[1].count, 3u);
  EXPECT_THROW(read_class_table(temp_file("bad.csv", "class_id,label,count\na,b,notanumber\n")), DataError);
  EXPECT_THROW(read_class_table(temp_file("dupe.csv", "a,x,1\na,y,2\n")), DataError);
  EXPECT_THROW(read_class_table("/nonexistent.csv"), DataError);
}

TEST(Exclusion, EmptyListIsIdentity) {
  ClassSet all{{{"c1", "Cat", 1}, {"c2", "Dog", 1}}, ClassRole::all};
  auto r = exclude_overlap(all, {}, {});
  EXPECT_EQ(r.kept.ids(), all.ids());
  EXPECT_TRUE(r.removed.empty());
}

TEST(Exclusion, SynonymResolution) {
  ClassSet all{{{"c1", "Cat", 1}, {"c2", "Dog", 1}}, ClassRole::all};
  auto r = exclude_overlap(all, {"cat"}, {{"cat", {"c1"}}});
  EXPECT_EQ(r.kept.ids(), (std::vector<std::string>{"c2"}));
  EXPECT_EQ(r.removed_ids(), (std::vector<std::string>{"c1"}));
  EXPECT_EQ(r.audit()[0]["entry"], "cat");
}

TEST(Exclusion, UnmatchedEntryIsAnError) {
  ClassSet all{{{"c1", "Cat", 1}}, ClassRole::all};
  try {
    exclude_overlap(all, {"zither"}, {});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("zither"), std::string::npos);
  }
}

TEST(Exclusion, AuditReconstructsRemovalOnRandomCases) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    ClassSet all;
    const std::size_t n = 3 + rng.index(20);
    for (std::size_t i = 0; i < n; ++i)
      all.classes.push_back({"id" + std::to_string(i), "Label " + std::to_string(i), 1});
    std::vector<std::string> excl;
    SynonymMap syn;
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.bernoulli(0.2)) excl.push_back("Label " + std::to_string(i));
      else if (rng.bernoulli(0.1)) {
        const std::string e = "alias" + std::to_string(i);
        excl.push_back(e);
        syn[e] = {"id" + std::to_string(i), "id" + std::to_string(rng.index(n))};
      }
    }
    auto r = exclude_overlap(all, excl, syn);
    std::set<std::string> removed;
    for (const auto& [entry, ids] : r.removed) removed.insert(ids.begin(), ids.end());
    for (const auto& c : all.classes) ASSERT_EQ(r.kept.contains(c.id), !removed.count(c.id));
    ASSERT_EQ(r.kept.size() + removed.size(), n);
  }
}

TEST(Manifest, JsonLinesRoundTripAndValidation) {
  DatasetManifest m;
  m.records = {{"a", "wav/a.wav", {"c1"}, Split::train}, {"b", "wav/b.wav", {"c1", "c2"}, Split::test}};
  auto p = temp_file("m.jsonl", "");
  write_manifest(p, m);
  auto back = read_manifest(p);
  ASSERT_EQ(back.records.size(), 2u);
  EXPECT_EQ(back.records[1].tags, (std::vector<std::string>{"c1", "c2"}));
  EXPECT_EQ(back.records[1].split, Split::test);
  EXPECT_EQ(back.audio_path(back.records[0]), p.parent_path() / "wav/a.wav");
  ClassSet vocab{{{"c1", "x", 0}}, ClassRole::all};
  EXPECT_THROW(back.validate(vocab), DataError);
  std::ifstream in(p);
  std::string first;
  std::getline(in, first);
  EXPECT_EQ(first, R"({"id":"a","path":"wav/a.wav","tags":["c1"],"split":"train"})");
  EXPECT_THROW(read_manifest(temp_file("bad.jsonl", "{\"id\": 1}\n")), DataError);
}

namespace {
DatasetManifest sampler_manifest() {
  DatasetManifest m;
  m.records = {{"a0", "a0", {"A"}, Split::train}, {"b0", "b0", {"B"}, Split::train},
               {"b1", "b1", {"B"}, Split::train}, {"b2", "b2", {"B"}, Split::train},
               {"x0", "x0", {"X"}, Split::train}, {"a_val", "a_val", {"A"}, Split::val}};
  return m;
}
}  // namespace

TEST(Sampler, ClassSlotsAreBalanced) {
  auto m = sampler_manifest();
  BalancedSampler s(m, {"A", "B"}, 3);
  std::map<std::string, int> counts;
  for (int i = 0; i < 1000; ++i) counts[m.records[s.next()].id]++;
  // expectation: A's single clip fills every A slot; B's three clips share the rest
  const double expected[] = {500, 500.0 / 3, 500.0 / 3, 500.0 / 3};
  const int observed[] = {counts["a0"], counts["b0"], counts["b1"], counts["b2"]};
  double chi2 = 0;
  for (int i = 0; i < 4; ++i) chi2 += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
  EXPECT_LT(chi2, 11.34);  // 99th percentile, 3 dof
  EXPECT_EQ(counts["a0"], 500);
  EXPECT_EQ(counts["x0"], 0);
  EXPECT_EQ(counts["a_val"], 0);
  EXPECT_EQ(s.eligible_clips(), 4u);
}

TEST(Sampler, ExcludedOnlyClipNeverDrawn) {
  auto m = sampler_manifest();
  BalancedSampler s(m, {"A", "B"}, 4);
  for (int i = 0; i < 10000; ++i) ASSERT_NE(m.records[s.next()].id, "x0");
}

TEST(Sampler, SingleClipGivesConstantStream) {
  auto m = sampler_manifest();
  BalancedSampler s(m, {"A"}, 5);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(s.next(), 0u);
}

TEST(Sampler, DeterministicAndUniformLongRun) {
  DatasetManifest m;
  for (int c = 0; c < 5; ++c)
    for (int i = 0; i <= c; ++i)
      m.records.push_back({"k" + std::to_string(c) + "_" + std::to_string(i), "p" + std::to_string(c) + std::to_string(i),
                           {"k" + std::to_string(c)}, Split::train});
  std::vector<std::string> cls{"k0", "k1", "k2", "k3", "k4"};
  BalancedSampler a(m, cls, 9), b(m, cls, 9);
  std::map<std::string, int> per_class;
  const int draws = 50000;
  for (int i = 0; i < draws; ++i) {
    const auto x = a.next();
    ASSERT_EQ(x, b.next());
    per_class[m.records[x].tags[0]]++;
  }
  const double p = 0.2, sigma = std::sqrt(draws * p * (1 - p));
  for (const auto& c : cls) EXPECT_LE(std::abs(per_class[c] - draws * p), 3 * sigma);
}

TEST(Sampler, ClassWithoutClipsIsAnError) {
  auto m = sampler_manifest();
  EXPECT_THROW(BalancedSampler(m, {"A", "Q"}, 1), DataError);
  EXPECT_THROW(BalancedSampler(m, {}, 1), ConfigError);
}
