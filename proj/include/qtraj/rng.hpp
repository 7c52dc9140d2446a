// rng.hpp — seeded random streams and seed derivation.
//
// Every stochastic routine takes an explicit Rng owned by the caller, so a
// trajectory is a pure function of (config, seed). Parallel ensembles give
// each trajectory its own stream derived from a base seed, which keeps
// results byte-identical across thread counts.
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace qtraj {

// splitmix64: cheap, well-mixed 64-bit finalizer. Used to turn structured
// seeds (base + index, hashes) into statistically independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}

    double normal() { return normal_(gen_); }
    double uniform() { return uniform_(gen_); }

    std::mt19937_64& engine() { return gen_; }

  private:
    std::mt19937_64 gen_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Stream seed for trajectory `index` of an experiment: independent of how
// many trajectories run and of any threading layout.
constexpr std::uint64_t stream_seed(std::uint64_t base, std::uint64_t index) {
    return base + index;
}

}  // namespace qtraj
