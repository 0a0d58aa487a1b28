#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace retina {

/// Mixes a parent seed with a key into an independent child seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);

/// Seeded random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The distributions on top are written out here rather than taken
/// from <random> because the standard distributions are implementation
/// defined, and every run must be reproducible bit for bit across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Uniform integer in [lo, hi], inclusive.
  std::int64_t between(std::int64_t lo, std::int64_t hi);

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal draw (Box-Muller, one output per call).
  double normal();

  /// Independent stream keyed by name; does not advance this stream.
  Rng substream(std::string_view name) const { return Rng(derive_seed(seed_, name)); }
  Rng substream(std::uint64_t key) const { return Rng(derive_seed(seed_, key)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace retina
