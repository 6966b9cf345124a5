#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>

namespace unig {

// Stateless 64-bit mixer (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x);

// Combines a base seed with any number of tags into an independent seed.
std::uint64_t derive_seed(std::uint64_t seed,
                          std::initializer_list<std::uint64_t> tags);

/// Counter-based random stream: draw k is a pure function of (seed, k), so a
/// stream is reproducible on any platform and independent of how other
/// streams are interleaved with it. Single owner; do not share across threads.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal by Box-Muller; consumes exactly two draws.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Uniform integer in [0, n); n > 0. Unbiased (rejection).
  std::size_t choice(std::size_t n);
  // +1 or -1 with equal probability.
  double sign();

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = choice(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  // Independent child stream keyed by `tag`; leaves this stream untouched.
  RngStream fork(std::uint64_t tag) const {
    return RngStream(derive_seed(seed_, {tag}));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace unig
