#include "unig/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace unig {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed,
                          std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = mix64(seed ^ 0x5851F42D4C957F2DULL);
  for (std::uint64_t t : tags) h = mix64(h ^ mix64(t + 0x632BE59BD9B4E019ULL));
  return h;
}

std::uint64_t RngStream::next_u64() {
  // Two rounds keep neighbouring counters and neighbouring seeds decorrelated.
  const std::uint64_t c = counter_++;
  return mix64(mix64(seed_) ^ mix64(c * 0xD1B54A32D192ED03ULL + 1));
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  // u1 in (0, 1] so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t RngStream::choice(std::size_t n) {
  const std::uint64_t range = n;
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return static_cast<std::size_t>(v % range);
}

double RngStream::sign() { return (next_u64() >> 63) ? 1.0 : -1.0; }

}  // namespace unig
