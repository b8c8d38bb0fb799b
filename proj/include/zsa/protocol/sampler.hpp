#pragma once

#include <set>
#include <string>
#include <vector>

#include "zsa/core/rng.hpp"
#include "zsa/protocol/manifest.hpp"

namespace zsa::protocol {

// Class-balanced stream over the training split: one shuffled queue of clip
// indices per class, visited round-robin. A queue is reshuffled whenever it
// runs out; its generator is seeded from (seed, class id). Clips tagged with
// none of the classes are never emitted. Single owner, not thread-safe.
class BalancedSampler {
 public:
  BalancedSampler(const DatasetManifest& manifest, const std::vector<std::string>& classes,
                  std::uint64_t seed, Split split = Split::train) {
    if (classes.empty()) throw ConfigError("balanced sampler: empty class set");
    std::set<std::size_t> eligible;
    for (const auto& id : classes) {
      Queue q{id, {}, 0, Rng(mix_seed(seed, hash_name(id)))};
      for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& r = manifest.records[i];
        if (r.split != split) continue;
        for (const auto& t : r.tags)
          if (t == id) {
            q.clips.push_back(i);
            eligible.insert(i);
            break;
          }
      }
      if (q.clips.empty()) throw DataError("balanced sampler: class '" + id + "' has no clips in the " + to_string(split) + " split");
      q.rng.shuffle(q.clips.begin(), q.clips.end());
      queues_.push_back(std::move(q));
    }
    eligible_ = eligible.size();
  }

  // Index into manifest.records.
  std::size_t next() {
    auto& q = queues_[cursor_];
    cursor_ = (cursor_ + 1) % queues_.size();
    if (q.pos == q.clips.size()) {
      q.rng.shuffle(q.clips.begin(), q.clips.end());
      q.pos = 0;
    }
    return q.clips[q.pos++];
  }

  // Number of distinct clips the stream can emit; defines an epoch.
  std::size_t eligible_clips() const { return eligible_; }

 private:
  struct Queue {
    std::string class_id;
    std::vector<std::size_t> clips;
    std::size_t pos = 0;
    Rng rng;
  };
  std::vector<Queue> queues_;
  std::size_t cursor_ = 0;
  std::size_t eligible_ = 0;
};

}  // namespace zsa::protocol
