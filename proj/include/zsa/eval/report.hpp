#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zsa/eval/metrics.hpp"

namespace zsa::eval {

struct ClassResult {
  std::string class_id;
  std::optional<double> ap;  // nullopt: skipped (no positives)
  std::optional<double> random_ap;
  std::size_t positives = 0;
};

struct CategoryAccuracy {
  std::string category;
  double accuracy = 0.0;
  std::size_t instances = 0;
  double random = 0.0;
};

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<ClassResult> per_class;
  std::optional<double> map;
  std::size_t skipped = 0;
  std::optional<double> accuracy;
  std::vector<CategoryAccuracy> categories;
};

// Results of one (condition, backbone, semantic source) cell, per seed and
// averaged over seeds.
struct EvalReport {
  std::string task = "tagging";  // tagging | classification
  std::string condition;
  std::string backbone;
  std::string semantic_source;
  std::vector<std::string> candidate_classes;
  double random_baseline = 0.0;
  std::vector<RunResult> runs;

  std::optional<double> mean_map;
  std::optional<double> mean_accuracy;
  std::vector<CategoryAccuracy> mean_categories;
  std::optional<ProximityReport> proximity;

  std::string tie_policy = "score ties broken by stable instance order";
  nlohmann::json provenance = nlohmann::json::object();

  // Averages run metrics over seeds.
  void finalize() {
    if (runs.empty()) return;
    const double n = static_cast<double>(runs.size());
    if (runs.front().map) {
      double s = 0;
      for (const auto& r : runs) s += r.map.value_or(0.0);
      mean_map = s / n;
    }
    if (runs.front().accuracy) {
      double s = 0;
      for (const auto& r : runs) s += r.accuracy.value_or(0.0);
      mean_accuracy = s / n;
    }
    mean_categories.clear();
    for (std::size_t c = 0; c < runs.front().categories.size(); ++c) {
      CategoryAccuracy m = runs.front().categories[c];
      double s = 0;
      for (const auto& r : runs) s += r.categories.at(c).accuracy;
      m.accuracy = s / n;
      mean_categories.push_back(m);
    }
  }
};

namespace detail {
inline nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
inline std::optional<double> opt(const nlohmann::json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}
inline nlohmann::json to_json(const std::vector<CategoryAccuracy>& cats) {
  auto a = nlohmann::json::array();
  for (const auto& c : cats)
    a.push_back({{"category", c.category}, {"accuracy", c.accuracy}, {"instances", c.instances}, {"random", c.random}});
  return a;
}
inline std::vector<CategoryAccuracy> categories_from_json(const nlohmann::json& a) {
  std::vector<CategoryAccuracy> out;
  for (const auto& c : a)
    out.push_back({c.at("category").get<std::string>(), c.at("accuracy").get<double>(),
                   c.at("instances").get<std::size_t>(), c.at("random").get<double>()});
  return out;
}
}  // namespace detail

inline nlohmann::json to_json(const ProximityReport& p) {
  nlohmann::json j;
  j["r"] = detail::opt(p.r);
  j["r_defined"] = p.r.has_value();
  j["classes"] = nlohmann::json::array();
  for (const auto& e : p.entries)
    j["classes"].push_back({{"class_id", e.class_id},
                            {"ap", e.ap},
                            {"random_ap", e.random_ap},
                            {"nearest_train_class", e.nearest_train_class},
                            {"proximity", e.proximity}});
  return j;
}

inline ProximityReport proximity_from_json(const nlohmann::json& j) {
  ProximityReport p;
  p.r = detail::opt(j.at("r"));
  for (const auto& e : j.at("classes"))
    p.entries.push_back({e.at("class_id").get<std::string>(), e.at("ap").get<double>(),
                         e.at("random_ap").get<double>(), e.at("nearest_train_class").get<std::string>(),
                         e.at("proximity").get<double>()});
  return p;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["task"] = r.task;
  j["condition"] = r.condition;
  j["backbone"] = r.backbone;
  j["semantic_source"] = r.semantic_source;
  j["candidate_classes"] = r.candidate_classes;
  j["random_baseline"] = r.random_baseline;
  j["tie_policy"] = r.tie_policy;
  j["runs"] = nlohmann::json::array();
  for (const auto& run : r.runs) {
    nlohmann::json jr;
    jr["seed"] = run.seed;
    jr["map"] = detail::opt(run.map);
    jr["skipped"] = run.skipped;
    jr["accuracy"] = detail::opt(run.accuracy);
    jr["categories"] = detail::to_json(run.categories);
    jr["per_class"] = nlohmann::json::array();
    for (const auto& c : run.per_class)
      jr["per_class"].push_back({{"class_id", c.class_id},
                                 {"ap", detail::opt(c.ap)},
                                 {"random_ap", detail::opt(c.random_ap)},
                                 {"positives", c.positives}});
    j["runs"].push_back(std::move(jr));
  }
  j["mean"] = {{"map", detail::opt(r.mean_map)},
               {"accuracy", detail::opt(r.mean_accuracy)},
               {"categories", detail::to_json(r.mean_categories)}};
  j["proximity"] = r.proximity ? to_json(*r.proximity) : nlohmann::json(nullptr);
  j["provenance"] = r.provenance;
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.task = j.at("task").get<std::string>();
    r.condition = j.at("condition").get<std::string>();
    r.backbone = j.at("backbone").get<std::string>();
    r.semantic_source = j.at("semantic_source").get<std::string>();
    r.candidate_classes = j.at("candidate_classes").get<std::vector<std::string>>();
    r.random_baseline = j.at("random_baseline").get<double>();
    r.tie_policy = j.at("tie_policy").get<std::string>();
    for (const auto& jr : j.at("runs")) {
      RunResult run;
      run.seed = jr.at("seed").get<std::uint64_t>();
      run.map = detail::opt(jr.at("map"));
      run.skipped = jr.at("skipped").get<std::size_t>();
      run.accuracy = detail::opt(jr.at("accuracy"));
      run.categories = detail::categories_from_json(jr.at("categories"));
      for (const auto& c : jr.at("per_class"))
        run.per_class.push_back({c.at("class_id").get<std::string>(), detail::opt(c.at("ap")),
                                 detail::opt(c.at("random_ap")), c.at("positives").get<std::size_t>()});
      r.runs.push_back(std::move(run));
    }
    const auto& m = j.at("mean");
    r.mean_map = detail::opt(m.at("map"));
    r.mean_accuracy = detail::opt(m.at("accuracy"));
    r.mean_categories = detail::categories_from_json(m.at("categories"));
    if (!j.at("proximity").is_null()) r.proximity = proximity_from_json(j.at("proximity"));
    r.provenance = j.at("provenance");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return r;
}

// Rows are conditions (tagging) or categories plus "All" (classification);
// columns are backbone x semantic source.
struct ResultTable {
  std::string title;
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::map<std::pair<std::size_t, std::size_t>, double> cells;  // fractions, shown as %

  std::size_t filled() const { return cells.size(); }

  std::string render() const {
    std::size_t w0 = 10;
    for (const auto& r : rows) w0 = std::max(w0, r.size() + 2);
    std::size_t wc = 10;
    for (const auto& c : columns) wc = std::max(wc, c.size() + 2);
    std::ostringstream os;
    if (!title.empty()) os << title << '\n';
    auto pad = [](const std::string& s, std::size_t w, bool right) {
      if (s.size() >= w) return s;
      return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
    };
    os << pad("", w0, false);
    for (const auto& c : columns) os << pad(c, wc, true);
    os << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i) {
      os << pad(rows[i], w0, false);
      for (std::size_t j = 0; j < columns.size(); ++j) {
        auto it = cells.find({i, j});
        char buf[32];
        if (it == cells.end()) std::snprintf(buf, sizeof buf, "-");
        else std::snprintf(buf, sizeof buf, "%.2f", 100.0 * it->second);
        os << pad(buf, wc, true);
      }
      os << '\n';
    }
    return os.str();
  }
};

inline ResultTable results_table(const std::vector<EvalReport>& reports) {
  ResultTable t;
  auto index_of = [](std::vector<std::string>& v, const std::string& s) {
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] == s) return i;
    v.push_back(s);
    return v.size() - 1;
  };
  for (const auto& r : reports) {
    const auto col = index_of(t.columns, r.backbone + "/" + r.semantic_source);
    if (r.task == "classification") {
      t.title = "Top-1 accuracy (%)";
      const std::string prefix = reports.size() > 1 && !r.condition.empty() ? r.condition + ": " : "";
      for (const auto& c : r.mean_categories) t.cells[{index_of(t.rows, prefix + c.category), col}] = c.accuracy;
      if (r.mean_accuracy) t.cells[{index_of(t.rows, prefix + "All"), col}] = *r.mean_accuracy;
    } else {
      t.title = "mAP (%)";
      if (r.mean_map) t.cells[{index_of(t.rows, r.condition.empty() ? "all" : r.condition), col}] = *r.mean_map;
    }
  }
  return t;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

// Writes <path> (JSON) and the rendered table next to it with a .txt extension.
inline void emit_report(const EvalReport& r, const std::filesystem::path& path) {
  if (r.runs.empty()) throw DataError("emit_report: report has no runs");
  for (const auto& run : r.runs)
    if (r.task == "tagging" && run.per_class.empty()) throw DataError("emit_report: empty per-class list");
  write_text(path, to_json(r).dump(2) + "\n");
  std::string text = results_table({r}).render();
  if (r.proximity) {
    text += "\nproximity r = ";
    text += r.proximity->r ? std::to_string(*r.proximity->r) : std::string("undefined");
    text += "\n";
  }
  auto table = path;
  write_text(table.replace_extension(".txt"), text);
}

inline void emit_report(const ProximityReport& p, const std::filesystem::path& path) {
  if (p.entries.empty()) throw DataError("emit_report: empty per-class list");
  write_text(path, to_json(p).dump(2) + "\n");
  std::ostringstream os;
  os << "class        AP(%)   random(%)  nearest      proximity\n";
  for (const auto& e : p.entries) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-12s %6.2f  %8.2f   %-12s %8.4f\n", e.class_id.c_str(), 100 * e.ap,
                  100 * e.random_ap, e.nearest_train_class.c_str(), e.proximity);
    os << buf;
  }
  os << "r = " << (p.r ? std::to_string(*p.r) : std::string("undefined")) << '\n';
  auto table = path;
  write_text(table.replace_extension(".txt"), os.str());
}

inline EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report " + path.string());
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("malformed report " + path.string() + ": " + e.what());
  }
}

}  // namespace zsa::eval
