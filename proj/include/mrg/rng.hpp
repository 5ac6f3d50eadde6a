#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace mrg {

// SplitMix64 (Steele, Lea, Flood 2014). Chosen because every draw is a pure
// integer computation, so sampling decisions reproduce bit-for-bit on any
// platform. All randomness in the toolkit flows through this generator.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform draw in [0, n), n > 0. Multiply-shift keeps the path integer-only.
    uint64_t bounded(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    // One fair bit.
    bool coin() { return (next() >> 63) != 0; }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; only used for weight initialization.
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 == 0.0) u1 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    uint64_t state_;
};

// FNV-1a, used to derive per-split and per-example seeds from a base seed.
inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace mrg
