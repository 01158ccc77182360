#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace cpsattack {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed for stream `stream` of run `run_index`. Adding a new stream name
/// never changes the seeds of existing ones.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t run_index,
                                    std::string_view stream) {
    return mix64(mix64(master ^ mix64(run_index + 0x632be59bd9b4e019ULL)) ^ fnv1a(stream));
}

inline Rng make_rng(std::uint64_t master, std::uint64_t run_index, std::string_view stream) {
    return Rng(derive_seed(master, run_index, stream));
}

/// Standard normal draw. std::normal_distribution caches a second variate,
/// which makes draws depend on distribution object lifetime; this helper is
/// stateless so the same generator always yields the same sequence.
inline double standard_normal(Rng& rng) {
    constexpr double two_pi = 6.283185307179586476925286766559;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u1 = unif(rng);
    while (u1 <= 0.0) u1 = unif(rng);
    const double u2 = unif(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace cpsattack
