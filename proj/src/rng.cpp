#include "apb/rng.hpp"

#include "apb/errors.hpp"

#include <cmath>

namespace apb {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::uniform() {
    // 53 random bits -> [0,1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal(double mean, double stddev) {
    // Box-Muller; u1 shifted away from zero so log() is safe.
    double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mean + stddev * z;
}

std::uint64_t Rng::integer(std::uint64_t n) {
    if (n == 0) throw StructuralError("Rng::integer: n must be positive");
    // Modulo bias is ~n/2^64, irrelevant for the ranges used here.
    return gen_() % n;
}

} // namespace apb
