#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace noisydfa {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed derivation: every random component gets seed = fold(mix64, base, tags...).
// Tags name the consumer (stream kind, ensemble member, work item) so that
// independent consumers never share a sequence and results do not depend on
// the order in which work items are executed.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) noexcept {
    std::uint64_t s = mix64(base);
    for (auto t : tags) s = mix64(s ^ mix64(t + 0x632be59bd9b4e019ULL));
    return s;
}

namespace seed_tag {
inline constexpr std::uint64_t weights = 1;
inline constexpr std::uint64_t noise = 2;
inline constexpr std::uint64_t train_stream = 3;
inline constexpr std::uint64_t val_stream = 4;
inline constexpr std::uint64_t long_string = 5;
inline constexpr std::uint64_t perturbation = 6;
inline constexpr std::uint64_t ensemble = 7;
} // namespace seed_tag

} // namespace noisydfa
