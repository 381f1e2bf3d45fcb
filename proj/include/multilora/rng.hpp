// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace multilora {

/// splitmix64 stream. Chosen over std::mt19937 because the output sequence is
/// fixed by the algorithm itself, so identically seeded models are
/// bit-identical on every platform and in every language.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double next_unit() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double next_in(double lo, double hi) {
        return lo + next_unit() * (hi - lo);
    }

    std::uint64_t next_below(std::uint64_t n) {
        return n == 0 ? 0 : next() % n;
    }

private:
    std::uint64_t state_;
};

}  // namespace multilora
