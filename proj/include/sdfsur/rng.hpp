#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace sdfsur {

// Mixes a base seed with a stream id so per-shape / per-stage generators are
// independent. splitmix64 finisher.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// mt19937_64 engine with fixed output transforms. The engine is fully
// specified by the standard and the transforms below are pinned here, so
// streams are reproducible independently of the standard library version.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    // [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, one value per call (the sine branch is discarded)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // [0, n)
    int randint(int n) { return static_cast<int>(uniform() * n) % n; }

    uint64_t raw() { return eng_(); }

private:
    std::mt19937_64 eng_;
};

}  // namespace sdfsur
