#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "zsa/crossmodal/train.hpp"
#include "zsa/eval/report.hpp"

namespace zsa::eval {

namespace detail {
inline bool has_tag(const protocol::ManifestRecord& r, const std::string& id) {
  return std::find(r.tags.begin(), r.tags.end(), id) != r.tags.end();
}

inline std::vector<std::size_t> split_indices(const protocol::DatasetManifest& m, protocol::Split split) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (m.records[i].split == split) idx.push_back(i);
  if (idx.empty()) throw DataError("no clips in the " + protocol::to_string(split) + " split");
  return idx;
}
}  // namespace detail

// Candidate logits of the listed clips, one row each.
inline Tensor<float> candidate_scores(const crossmodal::ProjectionParams<float>& p,
                                      const crossmodal::ClipEmbeddings& emb,
                                      const std::vector<semantics::SemanticEmbedding>& candidates,
                                      const std::vector<std::size_t>& idx) {
  const auto z = crossmodal::project_batch(p, crossmodal::detail::gather_rows(emb, idx, p.input_dim()), Mode::eval,
                                           nullptr);
  return crossmodal::candidate_logits(z, candidates);
}

// Zero-shot tagging: per-class AP of the candidate classes over the clips of
// `split`, ranked by logit. Classes without positives are skipped.
inline RunResult evaluate_tagging(const crossmodal::ProjectionParams<float>& p,
                                  const protocol::DatasetManifest& manifest, const crossmodal::ClipEmbeddings& emb,
                                  const std::vector<semantics::SemanticEmbedding>& candidates, std::uint64_t seed,
                                  protocol::Split split = protocol::Split::test) {
  const auto idx = detail::split_indices(manifest, split);
  const auto L = candidate_scores(p, emb, candidates, idx);
  RunResult run;
  run.seed = seed;
  std::vector<std::optional<double>> aps;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    std::vector<double> s(idx.size());
    std::vector<int> y(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      s[r] = L(r, c);
      y[r] = detail::has_tag(manifest.records[idx[r]], candidates[c].class_id);
    }
    ClassResult cr{candidates[c].class_id, average_precision(s, y), random_ap(y),
                   static_cast<std::size_t>(std::count(y.begin(), y.end(), 1))};
    aps.push_back(cr.ap);
    run.per_class.push_back(std::move(cr));
  }
  const auto m = mean_ap(aps);
  run.map = m.value;
  run.skipped = m.skipped;
  return run;
}

// Zero-shot classification over clips carrying exactly one candidate tag.
// Overall accuracy picks among all candidates; each category picks among its
// own candidates and is scored on clips whose label lies in the category.
inline RunResult evaluate_classification(const crossmodal::ProjectionParams<float>& p,
                                         const protocol::DatasetManifest& manifest,
                                         const crossmodal::ClipEmbeddings& emb,
                                         const std::vector<semantics::SemanticEmbedding>& candidates,
                                         const std::map<std::string, std::vector<std::string>>& categories,
                                         std::uint64_t seed, protocol::Split split = protocol::Split::test) {
  std::vector<std::size_t> idx;
  std::vector<std::string> truths;
  for (std::size_t i : detail::split_indices(manifest, split)) {
    std::vector<std::string> hits;
    for (const auto& c : candidates)
      if (detail::has_tag(manifest.records[i], c.class_id)) hits.push_back(c.class_id);
    if (hits.size() != 1) continue;
    idx.push_back(i);
    truths.push_back(hits.front());
  }
  if (idx.empty()) throw DataError("classification: no single-label clips of the candidate classes");
  const auto L = candidate_scores(p, emb, candidates, idx);
  RunResult run;
  run.seed = seed;
  auto predict = [&](std::size_t r, const std::vector<std::size_t>& cols) {
    std::vector<double> logits;
    std::vector<semantics::SemanticEmbedding> sub;
    for (std::size_t c : cols) {
      logits.push_back(L(r, c));
      sub.push_back(candidates[c]);
    }
    return sub[crossmodal::argmax_candidate(logits, sub)].class_id;
  };
  std::vector<std::size_t> all(candidates.size());
  for (std::size_t c = 0; c < all.size(); ++c) all[c] = c;
  std::vector<std::string> preds;
  for (std::size_t r = 0; r < idx.size(); ++r) preds.push_back(predict(r, all));
  run.accuracy = top1_accuracy(preds, truths);

  for (const auto& [name, members] : categories) {
    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < candidates.size(); ++c)
      if (std::find(members.begin(), members.end(), candidates[c].class_id) != members.end()) cols.push_back(c);
    if (cols.empty()) continue;
    std::vector<std::string> cp, ct;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (std::find(members.begin(), members.end(), truths[r]) == members.end()) continue;
      cp.push_back(predict(r, cols));
      ct.push_back(truths[r]);
    }
    if (ct.empty()) continue;
    run.categories.push_back({name, top1_accuracy(cp, ct), ct.size(), random_baseline_classification(cols.size())});
  }
  return run;
}

}  // namespace zsa::eval
