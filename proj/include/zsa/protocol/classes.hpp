#pragma once

#include <boost/tokenizer.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zsa/core/error.hpp"

namespace zsa::protocol {

enum class ClassRole { all, train, test, pinned, excluded };

inline std::string to_string(ClassRole r) {
  switch (r) {
    case ClassRole::all: return "all";
    case ClassRole::train: return "train";
    case ClassRole::test: return "test";
    case ClassRole::pinned: return "pinned";
    case ClassRole::excluded: return "excluded";
  }
  return "?";
}

struct ClassInfo {
  std::string id;
  std::string label;
  std::uint64_t count = 0;  // tag count in the training split
};

// Ordered classes sharing a role. Ids are unique.
struct ClassSet {
  std::vector<ClassInfo> classes;
  ClassRole role = ClassRole::all;

  std::size_t size() const { return classes.size(); }
  bool empty() const { return classes.empty(); }

  bool contains(const std::string& id) const {
    return std::any_of(classes.begin(), classes.end(), [&](const auto& c) { return c.id == id; });
  }
  const ClassInfo& find(const std::string& id) const {
    for (const auto& c : classes)
      if (c.id == id) return c;
    throw DataError("unknown class id '" + id + "'");
  }
  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& c : classes) out.push_back(c.id);
    return out;
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& c : classes)
      if (!seen.insert(c.id).second) throw DataError("duplicate class id '" + c.id + "'");
  }

  // Classes of this set whose id is in `ids`, keeping this set's order.
  ClassSet subset(const std::vector<std::string>& ids, ClassRole r) const {
    std::set<std::string> want(ids.begin(), ids.end());
    ClassSet out{{}, r};
    for (const auto& c : classes)
      if (want.count(c.id)) out.classes.push_back(c);
    if (out.size() != want.size()) {
      for (const auto& id : want)
        if (!contains(id)) throw ConfigError("class id '" + id + "' is not in the class table");
    }
    return out;
  }

  ClassSet without(const std::vector<std::string>& ids, ClassRole r) const {
    std::set<std::string> drop(ids.begin(), ids.end());
    ClassSet out{{}, r};
    for (const auto& c : classes)
      if (!drop.count(c.id)) out.classes.push_back(c);
    return out;
  }
};

using TagCountTable = ClassSet;

// CSV "class_id,label,count" with a header row; labels may be quoted.
inline TagCountTable read_class_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open class table " + path.string());
  TagCountTable t;
  std::string line;
  std::size_t line_no = 0;
  using Tok = boost::tokenizer<boost::escaped_list_separator<char>>;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    try {
      Tok tok(line);
      cells.assign(tok.begin(), tok.end());
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (line_no == 1 && !cells.empty() && cells[0] == "class_id") continue;
    if (cells.size() != 3)
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
    std::uint64_t count = 0;
    try {
      std::size_t used = 0;
      count = std::stoull(cells[2], &used);
      if (used != cells[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad count '" + cells[2] + "'");
    }
    t.classes.push_back({cells[0], cells[1], count});
  }
  t.validate();
  if (t.empty()) throw DataError("class table " + path.string() + " is empty");
  return t;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\\") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out + "\"";
}

inline void write_class_table(const std::filesystem::path& path, const TagCountTable& t) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "class_id,label,count\n";
  for (const auto& c : t.classes) out << csv_quote(c.id) << ',' << csv_quote(c.label) << ',' << c.count << '\n';
}

struct Fold {
  std::vector<std::string> class_ids;
  std::uint64_t total = 0;
};

struct FoldSplit {
  std::vector<Fold> folds;
  std::vector<std::string> pinned;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["pinned"] = pinned;
    j["folds"] = nlohmann::json::array();
    for (std::size_t i = 0; i < folds.size(); ++i)
      j["folds"].push_back({{"index", i}, {"classes", folds[i].class_ids}, {"total_tags", folds[i].total}});
    return j;
  }
  static FoldSplit from_json(const nlohmann::json& j) {
    FoldSplit s;
    try {
      s.pinned = j.at("pinned").get<std::vector<std::string>>();
      for (const auto& f : j.at("folds"))
        s.folds.push_back({f.at("classes").get<std::vector<std::string>>(), f.at("total_tags").get<std::uint64_t>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed fold-split document: ") + e.what());
    }
    return s;
  }
};

// Greedy balancing: visit classes by descending count (ties: class id) and
// put each into the fold with the smallest tag total (ties: lowest index).
inline FoldSplit balance_folds(const TagCountTable& counts, std::size_t k,
                               const std::vector<std::string>& pinned) {
  if (k < 2) throw ConfigError("balance_folds: need at least 2 folds");
  std::set<std::string> pin(pinned.begin(), pinned.end());
  std::vector<const ClassInfo*> order;
  for (const auto& c : counts.classes)
    if (!pin.count(c.id)) order.push_back(&c);
  for (const auto& p : pin)
    if (!counts.contains(p)) throw ConfigError("pinned class '" + p + "' is not in the count table");
  if (order.empty()) throw ConfigError("balance_folds: no classes left after pinning");
  if (k > order.size())
    throw ConfigError("balance_folds: " + std::to_string(k) + " folds for " + std::to_string(order.size()) +
                      " classes");
  std::sort(order.begin(), order.end(), [](const ClassInfo* a, const ClassInfo* b) {
    return a->count != b->count ? a->count > b->count : a->id < b->id;
  });
  FoldSplit s;
  s.folds.resize(k);
  s.pinned.assign(pin.begin(), pin.end());
  for (const auto* c : order) {
    std::size_t best = 0;
    for (std::size_t f = 1; f < k; ++f)
      if (s.folds[f].total < s.folds[best].total) best = f;
    s.folds[best].class_ids.push_back(c->id);
    s.folds[best].total += c->count;
  }
  return s;
}

// Exclusion entry -> class ids, maintained by hand and versioned with the data.
using SynonymMap = std::map<std::string, std::vector<std::string>>;

inline SynonymMap read_synonym_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open synonym map " + path.string());
  try {
    return nlohmann::json::parse(in).get<SynonymMap>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed synonym map " + path.string() + ": " + e.what());
  }
}

inline std::vector<std::string> read_label_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label list " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto a = line.find_first_not_of(" \t");
    if (a == std::string::npos || line[a] == '#') continue;
    out.push_back(line.substr(a, line.find_last_not_of(" \t") - a + 1));
  }
  return out;
}

struct ExclusionResult {
  ClassSet kept;
  // (exclusion entry, class ids it removed), in exclusion-list order.
  std::vector<std::pair<std::string, std::vector<std::string>>> removed;

  std::vector<std::string> removed_ids() const {
    std::set<std::string> ids;
    for (const auto& [_, v] : removed) ids.insert(v.begin(), v.end());
    return {ids.begin(), ids.end()};
  }
  nlohmann::json audit() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& [entry, ids] : removed) j.push_back({{"entry", entry}, {"removed", ids}});
    return j;
  }
};

// Removes every class matched by an exclusion entry, either by exact label or
// id match or through the synonym map. An entry matching nothing is an error.
inline ExclusionResult exclude_overlap(const ClassSet& all, const std::vector<std::string>& exclusion,
                                       const SynonymMap& synonyms) {
  ExclusionResult r;
  std::set<std::string> drop;
  for (const auto& entry : exclusion) {
    std::set<std::string> hits;
    for (const auto& c : all.classes)
      if (c.label == entry || c.id == entry) hits.insert(c.id);
    if (auto it = synonyms.find(entry); it != synonyms.end())
      for (const auto& id : it->second) {
        if (!all.contains(id))
          throw DataError("synonym map entry '" + entry + "' refers to unknown class '" + id + "'");
        hits.insert(id);
      }
    if (hits.empty()) throw DataError("exclusion entry '" + entry + "' matches no class");
    r.removed.emplace_back(entry, std::vector<std::string>(hits.begin(), hits.end()));
    drop.insert(hits.begin(), hits.end());
  }
  r.kept = all.without({drop.begin(), drop.end()}, ClassRole::train);
  return r;
}

}  // namespace zsa::protocol
