#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace lapanet {

/// Derives a child seed from a parent seed and a list of stream indices.
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0)
{
    uint64_t z = seed;
    for (uint64_t v : {a, b}) {
        z += 0x9e3779b97f4a7c15ULL + v * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z ^= z >> 31;
    }
    return z;
}

/// Seeded engine with the handful of draws the library needs.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace lapanet
