#pragma once

#include <cmath>
#include <cstdint>

namespace steerlab {

// Counter-based deterministic generator: value i depends only on (seed, i),
// never on call order.
class CounterRng {
public:
    explicit CounterRng(uint64_t seed) : seed_(seed) {}

    // splitmix64 finalizer over seed ^ counter stream.
    static uint64_t mix(uint64_t seed, uint64_t counter) {
        uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (counter + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in (0, 1].
    double uniform(uint64_t counter) const {
        uint64_t bits = mix(seed_, counter) >> 11;  // 53 bits
        return (static_cast<double>(bits) + 1.0) * 0x1p-53;
    }

    // Standard normal via Box-Muller on two decorrelated counters.
    double normal(uint64_t counter) const {
        double u1 = uniform(2 * counter);
        double u2 = uniform(2 * counter + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
};

}  // namespace steerlab
