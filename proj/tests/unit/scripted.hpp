#pragma once

// Scripted sampler run: a synthetic decoder gets a fixed number of bits
// wrong per message (value mod 3), and the buffer is rebuilt every epoch.

#include <cmath>
#include <string>
#include <vector>

#include "splatmark/sampler.hpp"

namespace splatmark::testing {

struct ScriptedEpoch {
  int epoch = 0;
  std::size_t size = 0;
  std::size_t distinct = 0;
  std::size_t hard = 0;
  std::size_t expected_hard = 0;
  bool frozen = false;
  bool subset_of_memory = true;
};

inline ad::Matrix scripted_logits(std::span<const BitMessage> batch) {
  ad::Matrix logits(static_cast<ad::Index>(batch.size()), batch.empty() ? 0 : batch[0].size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& m = batch[b];
    const int wrong = static_cast<int>(m.to_integer() % 3);
    for (int i = 0; i < m.size(); ++i) {
      const double sign = m[i] ? 1.0 : -1.0;
      logits(static_cast<ad::Index>(b), i) = i < wrong ? -sign : sign;
    }
  }
  return logits;
}

inline std::vector<ScriptedEpoch> run_scripted(const SamplerConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  KeySet seen;
  AccuracyMemory memory;
  auto buffer = initial_buffer(seen, cfg, rng).messages;
  std::vector<ScriptedEpoch> out;
  for (int e = 1; e < cfg.epochs; ++e) {
    update_stats(memory, buffer, scripted_logits(buffer), cfg);
    const auto built = rebuild_buffer(e, memory, seen, buffer, cfg, rng);
    buffer = built.messages;
    ScriptedEpoch s;
    s.epoch = e;
    s.size = buffer.size();
    KeySet distinct;
    for (const auto& m : buffer) {
      distinct.insert(key_of(m));
      if (!memory.contains(key_of(m))) s.subset_of_memory = false;
    }
    s.distinct = distinct.size();
    s.hard = built.hard_count;
    s.expected_hard =
        static_cast<std::size_t>(std::floor(hard_ratio(e, cfg) * static_cast<double>(cfg.capacity())));
    s.frozen = built.frozen;
    out.push_back(s);
  }
  return out;
}

}  // namespace splatmark::testing
