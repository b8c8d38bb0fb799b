#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zsa/protocol/classes.hpp"

namespace zsa::protocol {

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "'");
}

struct ManifestRecord {
  std::string id;
  std::string path;  // relative to the manifest's directory unless absolute
  std::vector<std::string> tags;
  Split split = Split::train;

  bool tagged_with_any(const std::set<std::string>& classes) const {
    for (const auto& t : tags)
      if (classes.count(t)) return true;
    return false;
  }
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;

  std::filesystem::path audio_path(const ManifestRecord& r) const {
    std::filesystem::path p(r.path);
    return p.is_absolute() ? p : base_dir / p;
  }

  void validate(const ClassSet& vocabulary) const {
    std::set<std::string> ids, paths;
    for (const auto& r : records) {
      if (!ids.insert(r.id).second) throw DataError("manifest: duplicate clip id '" + r.id + "'");
      if (!paths.insert(r.path).second) throw DataError("manifest: path '" + r.path + "' used twice");
      for (const auto& t : r.tags)
        if (!vocabulary.contains(t))
          throw DataError("manifest: clip '" + r.id + "' has unknown tag '" + t + "'");
    }
  }

  std::size_t count(Split s) const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.split == s;
    return n;
  }
};

// JSON lines: {"id", "path", "tags": [class ids], "split"}.
inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      m.records.push_back({j.at("id").get<std::string>(), j.at("path").get<std::string>(),
                           j.at("tags").get<std::vector<std::string>>(),
                           parse_split(j.at("split").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest " + path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (m.records.empty()) throw DataError("manifest " + path.string() + " has no records");
  return m;
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& r : m.records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["path"] = r.path;
    j["tags"] = r.tags;
    j["split"] = to_string(r.split);
    out << j.dump() << '\n';
  }
}

}  // namespace zsa::protocol
