#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace realanon {

/// Seeded random source with portable uniform/normal draws and a
/// serializable state (used by checkpoints to resume bit-exactly).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Box-Muller; consumes exactly two engine draws.
  double normal();
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

/// Order-dependent combination of two seeds (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace realanon
