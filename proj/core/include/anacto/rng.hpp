#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace anacto {

// Deterministic random source. The engine (std::mt19937_64) is fully
// specified by the standard; the distributions below are hand-rolled so
// that streams are bit-identical across standard library implementations.
//
// All randomness in the project flows from one base seed through named
// substreams ("data", "init", "shuffle", ...), so components can be varied
// independently without perturbing each other.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  // Derives an independent stream from this stream's seed and a name.
  // Derivation depends only on the constructor seed, not on draw position.
  Rng substream(std::string_view name) const;
  Rng substream(std::uint64_t index) const;

  std::uint64_t raw() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Box-Muller without a cached spare: every call consumes exactly two
  // uniforms, which keeps interleaved streams reproducible.
  double normal(double mean, double stddev);

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t range(std::int64_t lo, std::int64_t hi);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_ = 0;
  std::mt19937_64 engine_;
};

}  // namespace anacto
