#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace splatmark {

/// Seeded generator with platform-independent draws.
///
/// The std distributions are implementation-defined, so every draw here is
/// derived directly from the mt19937_64 word stream. Shuffles use
/// Fisher-Yates with rejection-sampled bounded integers; the algorithm name
/// is recorded in artifacts as kShuffleAlgorithm.
class Rng {
 public:
  static constexpr const char* kShuffleAlgorithm = "fisher-yates/mt19937_64/v1";

  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t uniform_int(std::uint64_t bound);
  /// Standard normal via the Marsaglia polar method.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Derives an independent child stream; used to give each component its own seed.
  Rng fork(std::uint64_t salt);

  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// splitmix64 finalizer; mixes a seed with a salt into a new seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace splatmark
