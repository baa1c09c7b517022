#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace sav {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG. The std distributions are implementation-defined, so the
// uniform/normal transforms are spelled out here; a given (seed, draw sequence)
// yields the same values on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(splitmix64(seed)) {}

    uint64_t next_u64() { return gen_(); }

    // in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(gen_() % static_cast<uint64_t>(hi - lo + 1));
    }

    bool coin() { return (gen_() & 1ULL) != 0; }

    // Box-Muller, one value per call (no cached spare, keeps draw counts obvious)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stdev) { return mean + stdev * normal(); }

private:
    std::mt19937_64 gen_;
};

// Independent stream for (seed, stream id), e.g. per-sample augmentation draws.
inline Rng derive_rng(uint64_t seed, uint64_t stream) {
    return Rng(splitmix64(seed) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL));
}

}  // namespace sav
