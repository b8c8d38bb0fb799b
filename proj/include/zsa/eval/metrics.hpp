#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "zsa/core/error.hpp"
#include "zsa/semantics/vectors.hpp"

namespace zsa::eval {

// Non-interpolated average precision. Instances are ranked by descending
// score with ties kept in instance order. Returns nullopt when there are no
// positives; such classes are skipped rather than scored 0.
inline std::optional<double> average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DataError("average_precision: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k)
    if (labels[order[k]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

struct MeanAp {
  double value = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;
};

inline MeanAp mean_ap(std::span<const std::optional<double>> per_class) {
  MeanAp m;
  double sum = 0.0;
  for (const auto& ap : per_class) {
    if (ap) {
      sum += *ap;
      ++m.used;
    } else {
      ++m.skipped;
    }
  }
  if (m.used == 0) throw DataError("mean_ap: every class was skipped (no positives)");
  m.value = sum / static_cast<double>(m.used);
  return m;
}

// Fraction of correct top-1 predictions. With a candidate restriction every
// truth must lie inside it; predictions are assumed to come from classify()
// over exactly that set.
inline double top1_accuracy(std::span<const std::string> predictions, std::span<const std::string> truths,
                            const std::optional<std::set<std::string>>& restriction = std::nullopt) {
  if (predictions.size() != truths.size()) throw DataError("top1_accuracy: length mismatch");
  if (truths.empty()) throw DataError("top1_accuracy: empty evaluation set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (restriction && !restriction->count(truths[i]))
      throw DataError("top1_accuracy: truth '" + truths[i] + "' outside the candidate restriction");
    correct += predictions[i] == truths[i];
  }
  return static_cast<double>(correct) / static_cast<double>(truths.size());
}

// Exact expected AP of a uniformly random ranking with P positives among N:
//   (1/N) * sum_k (1/k) * (1 + (k-1)(P-1)/(N-1)),
// which tends to the prevalence P/N as P grows. nullopt without positives.
inline std::optional<double> random_ap(std::span<const int> labels) {
  if (labels.empty()) throw DataError("random_ap: empty evaluation set");
  const auto p = std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; });
  if (p == 0) return std::nullopt;
  const double N = static_cast<double>(labels.size()), P = static_cast<double>(p);
  if (labels.size() == 1) return 1.0;
  double s = 0.0;
  for (std::size_t k = 1; k <= labels.size(); ++k) {
    const double kk = static_cast<double>(k);
    s += (1.0 + (kk - 1.0) * (P - 1.0) / (N - 1.0)) / kk;
  }
  return s / N;
}

inline std::optional<double> prevalence(std::span<const int> labels) {
  if (labels.empty()) throw DataError("prevalence: empty evaluation set");
  const auto p = std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; });
  if (p == 0) return std::nullopt;
  return static_cast<double>(p) / static_cast<double>(labels.size());
}

// Mean over classes (skipping classes without positives) of random_ap.
inline double random_baseline_tagging(const std::vector<std::vector<int>>& labels_per_class) {
  if (labels_per_class.empty()) throw DataError("random baseline: no classes");
  std::vector<std::optional<double>> aps;
  for (const auto& l : labels_per_class) aps.push_back(random_ap(l));
  return mean_ap(aps).value;
}

inline double random_baseline_classification(std::size_t candidates) {
  if (candidates == 0) throw DataError("random baseline: no candidates");
  return 1.0 / static_cast<double>(candidates);
}

// Pearson correlation; nullopt when either variable has zero variance.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("pearson: length mismatch");
  if (x.size() < 2) throw DataError("pearson: need at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct ProximityEntry {
  std::string class_id;
  double ap = 0.0;
  double random_ap = 0.0;
  std::string nearest_train_class;
  double proximity = 0.0;  // cosine similarity to nearest_train_class
};

struct ProximityReport {
  std::vector<ProximityEntry> entries;
  std::optional<double> r;  // nullopt: undefined (zero variance)
};

// Correlates each test class's AP improvement over the random baseline with
// its semantic proximity to the closest training class.
inline ProximityReport proximity_correlation(const std::vector<std::string>& test_classes,
                                             const std::vector<double>& aps,
                                             const std::vector<double>& random_aps,
                                             const std::vector<semantics::SemanticEmbedding>& train_embeddings,
                                             const std::vector<semantics::SemanticEmbedding>& test_embeddings) {
  if (test_classes.size() < 3) throw DataError("proximity_correlation: need at least 3 test classes");
  if (aps.size() != test_classes.size() || random_aps.size() != test_classes.size())
    throw DataError("proximity_correlation: per-class inputs disagree in length");
  ProximityReport rep;
  std::vector<double> improvement, proximity;
  for (std::size_t i = 0; i < test_classes.size(); ++i) {
    auto it = std::find_if(test_embeddings.begin(), test_embeddings.end(),
                           [&](const auto& e) { return e.class_id == test_classes[i]; });
    if (it == test_embeddings.end())
      throw DataError("proximity_correlation: no embedding for test class '" + test_classes[i] + "'");
    const auto nn = semantics::nearest_neighbor(*it, train_embeddings);
    rep.entries.push_back({test_classes[i], aps[i], random_aps[i], nn.class_id, nn.similarity});
    improvement.push_back(aps[i] - random_aps[i]);
    proximity.push_back(nn.similarity);
  }
  rep.r = pearson(improvement, proximity);
  return rep;
}

}  // namespace zsa::eval
