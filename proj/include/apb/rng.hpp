#pragma once

#include <cstdint>
#include <random>

namespace apb {

/// Mixes two 64-bit values into a well-scrambled seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0);

/// Deterministic random stream.
///
/// Wraps mt19937_64 with hand-written transforms (no std:: distributions),
/// so a given seed produces the same stream on every standard library.
/// Golden traces and bit-identical rerun checks depend on this.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    /// Uniform double in [0, 1).
    double uniform();

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi);

    /// Gaussian via Box-Muller (one sample per call).
    double normal(double mean = 0.0, double stddev = 1.0);

    /// Uniform integer in [0, n). Requires n > 0.
    std::uint64_t integer(std::uint64_t n);

    /// Independent child stream; fork(k) of an Rng with the same seed is
    /// always the same stream, regardless of how much the parent was used.
    Rng fork(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

    /// Child stream that consumes parent state, so successive spawns differ.
    Rng spawn() { return Rng(gen_()); }

    std::uint64_t seed() const { return seed_; }

  private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
};

} // namespace apb
