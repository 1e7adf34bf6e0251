// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace volsurf {

/// splitmix64 finalizer; good avalanche, used to derive substream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic RNG wrapper.
///
/// mt19937_64 is fully specified by the standard; the uniform mapping below
/// uses the top 53 bits directly, so streams are reproducible across
/// compilers and platforms (std::uniform_real_distribution is not).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Derives an independent stream from a base seed and a path of indices
    /// (e.g. {stream_tag, epoch, surface_index}).
    static Rng substream(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
        std::uint64_t s = mix64(base);
        for (std::uint64_t p : path)
            s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
        return Rng(s);
    }

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform draw in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p_true) { return uniform() < p_true; }

    /// Fisher-Yates index permutation.
    template <typename T> void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(gen_() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
};

/// Stream tags so different consumers of the same base seed never collide.
namespace stream {
inline constexpr std::uint64_t kHestonParams = 1;
inline constexpr std::uint64_t kTrainMask = 2;
inline constexpr std::uint64_t kValMask = 3;
inline constexpr std::uint64_t kShuffle = 4;
inline constexpr std::uint64_t kParamInit = 5;
inline constexpr std::uint64_t kEvalMask = 6;
} // namespace stream

} // namespace volsurf
