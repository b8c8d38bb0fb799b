#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "zsa/core/error.hpp"

namespace zsa::semantics {

// Immutable after load; safe for concurrent reads.
class VectorStore {
 public:
  VectorStore() = default;
  VectorStore(std::size_t dim, std::string source) : dim_(dim), source_(std::move(source)) {}

  void add(const std::string& word, std::vector<float> v) {
    if (v.size() != dim_)
      throw DataError("vector for '" + word + "' has dimension " + std::to_string(v.size()) +
                      ", expected " + std::to_string(dim_));
    for (float x : v)
      if (!std::isfinite(x)) throw DataError("vector for '" + word + "' is not finite");
    if (!index_.emplace(word, words_.size()).second) throw DataError("duplicate word '" + word + "'");
    words_.push_back(word);
    data_.insert(data_.end(), v.begin(), v.end());
  }

  std::size_t size() const { return words_.size(); }
  std::size_t dim() const { return dim_; }
  const std::string& source() const { return source_; }
  bool contains(const std::string& w) const { return index_.count(w) > 0; }
  const std::vector<std::string>& words() const { return words_; }

  std::span<const float> operator[](const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) throw DataError("word '" + w + "' not in vocabulary");
    return {data_.data() + it->second * dim_, dim_};
  }

 private:
  std::size_t dim_ = 0;
  std::string source_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<float> data_;
};

namespace detail {
inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}
inline bool is_count(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}
inline float parse_float(const std::string& s, std::size_t line) {
  float v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end)
    throw DataError("line " + std::to_string(line) + ": cannot parse '" + s + "' as a number");
  return v;
}
}  // namespace detail

// Plain-text vectors: "word v1 ... vn" per line, optional "count dim" header.
// LF and CRLF line endings are accepted.
inline VectorStore load_word_vectors(const std::filesystem::path& path, std::string source = "") {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open word-vector file " + path.string());
  if (source.empty()) source = path.stem().string();
  VectorStore store;
  bool first = true;
  std::size_t line_no = 0, dim = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (first && tok.size() == 2 && detail::is_count(tok[0]) && detail::is_count(tok[1])) {
      first = false;
      continue;
    }
    if (tok.size() < 2) throw DataError("line " + std::to_string(line_no) + ": no vector components");
    if (dim == 0) {
      dim = tok.size() - 1;
      store = VectorStore(dim, source);
    } else if (tok.size() - 1 != dim) {
      throw DataError("line " + std::to_string(line_no) + ": dimension mismatch, found " +
                      std::to_string(tok.size() - 1) + " components, expected " + std::to_string(dim));
    }
    first = false;
    std::vector<float> v(dim);
    for (std::size_t i = 0; i < dim; ++i) v[i] = detail::parse_float(tok[i + 1], line_no);
    if (store.contains(tok[0]))
      throw DataError("line " + std::to_string(line_no) + ": duplicate word '" + tok[0] + "'");
    store.add(tok[0], std::move(v));
  }
  if (store.size() == 0) throw DataError("word-vector file " + path.string() + " is empty");
  return store;
}

inline void save_word_vectors(const std::filesystem::path& path, const std::vector<std::string>& words,
                              const std::vector<std::vector<float>>& vectors) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << words.size() << ' ' << (vectors.empty() ? 0 : vectors[0].size()) << '\n';
  char buf[32];
  for (std::size_t i = 0; i < words.size(); ++i) {
    out << words[i];
    for (float v : vectors[i]) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
}

// Lowercase; split on whitespace, commas and hyphens; parentheses are dropped
// but their contents stay as tokens.
inline std::vector<std::string> tokenize_label(const std::string& label) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : label) {
    if (std::isspace(c) || c == ',' || c == '-' || c == '(' || c == ')') flush();
    else cur.push_back(static_cast<char>(std::tolower(c)));
  }
  flush();
  return out;
}

struct ClassDescriptor {
  std::string class_id;
  std::string label;
  std::vector<std::string> tokens;

  static ClassDescriptor from_label(std::string id, std::string label) {
    auto tokens = tokenize_label(label);
    if (tokens.empty()) throw DataError("class '" + id + "' has an empty label");
    return {std::move(id), std::move(label), std::move(tokens)};
  }
};

struct SemanticEmbedding {
  std::string class_id;
  std::vector<float> vector;
};

struct LabelEmbedding {
  SemanticEmbedding embedding;
  std::vector<std::string> oov;  // skipped tokens, one warning each
};

// Mean of the in-vocabulary token vectors; unknown tokens are skipped.
inline LabelEmbedding embed_label(const ClassDescriptor& c, const VectorStore& store) {
  if (c.tokens.empty()) throw DataError("class '" + c.class_id + "' has no tokens");
  std::vector<double> acc(store.dim(), 0.0);
  std::size_t used = 0;
  LabelEmbedding out;
  for (const auto& tok : c.tokens) {
    if (!store.contains(tok)) {
      out.oov.push_back(tok);
      continue;
    }
    auto v = store[tok];
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
    ++used;
  }
  if (used == 0)
    throw DataError("unembeddable label '" + c.label + "' (class " + c.class_id +
                    "): no token is in the vocabulary");
  out.embedding.class_id = c.class_id;
  out.embedding.vector.resize(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i)
    out.embedding.vector[i] = static_cast<float>(acc[i] / static_cast<double>(used));
  return out;
}

inline double norm(std::span<const float> v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

inline double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DataError("cosine_similarity: dimension mismatch");
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DataError("cosine_similarity: zero-norm vector");
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += static_cast<double>(a[i]) * b[i];
  return d / (na * nb);
}

struct Neighbor {
  std::string class_id;
  double similarity = 0.0;
};

// Highest cosine similarity; ties go to the lowest class id.
inline Neighbor nearest_neighbor(const SemanticEmbedding& e, const std::vector<SemanticEmbedding>& candidates) {
  if (candidates.empty()) throw ConfigError("nearest_neighbor: empty candidate set");
  Neighbor best{"", -2.0};
  for (const auto& c : candidates) {
    const double s = cosine_similarity(e.vector, c.vector);
    if (s > best.similarity || (s == best.similarity && c.class_id < best.class_id)) best = {c.class_id, s};
  }
  return best;
}

}  // namespace zsa::semantics
