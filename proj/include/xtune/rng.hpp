#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace xtune {

// Seeded random source. One run seed is split into named substreams
// ("init", "sampling", "augmentation", "batching", ...) so that changing
// how much randomness one consumer draws never shifts another's sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  static std::uint64_t derive(std::uint64_t seed, std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return mix(seed ^ mix(h));
  }

  static Rng substream(std::uint64_t seed, std::string_view name) {
    return Rng(derive(seed, name));
  }

  // Child stream keyed by an integer (e.g. epoch or example index).
  Rng fork(std::uint64_t key) { return Rng(mix(engine_() ^ mix(key))); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace xtune
