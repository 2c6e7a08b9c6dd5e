#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "afb/error.hpp"

namespace afb {

/// Deterministic 64-bit PRNG (splitmix64). We avoid std::uniform_*_distribution
/// on purpose: its output is implementation-defined, and every sampling decision
/// in this library must reproduce bit-for-bit across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    /// Next raw 64-bit word.
    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1), 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0)
            throw ArgumentError("Rng::next_below: n must be positive");
        const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
        std::uint64_t x = next_u64();
        while (x >= limit)
            x = next_u64();
        return x % n;
    }

private:
    std::uint64_t state_;
};

/// Stream tags for mix_seed. One registry so unrelated sampling sites can
/// never collide on the same derived stream.
namespace seed_tag {
inline constexpr std::uint64_t subsample = 0xA1;
inline constexpr std::uint64_t neighbor_cap = 0xA2;
inline constexpr std::uint64_t pool_select = 0xA3;
inline constexpr std::uint64_t scale_graph = 0xA4;
inline constexpr std::uint64_t param_init = 0xA5;
inline constexpr std::uint64_t train_step = 0xA6;
inline constexpr std::uint64_t gen_case = 0xA7;
inline constexpr std::uint64_t jitter = 0xA8;
} // namespace seed_tag

/// Mix a base seed with a stream tag and indices so that independent sampling
/// sites (per epoch, per sample, per node) get decorrelated deterministic streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag,
                              std::uint64_t a = 0, std::uint64_t b = 0) {
    Rng r(seed ^ (tag * 0x9e3779b97f4a7c15ULL));
    std::uint64_t h = r.next_u64();
    h ^= a + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    Rng r2(h);
    h = r2.next_u64();
    h ^= b + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    Rng r3(h);
    return r3.next_u64();
}

/// k distinct indices drawn uniformly from [0, n), returned sorted ascending.
/// Partial Fisher-Yates over an index table; O(n) memory, deterministic.
inline std::vector<std::uint32_t> sample_without_replacement(std::uint64_t n,
                                                             std::uint64_t k,
                                                             Rng& rng) {
    if (k > n)
        throw ArgumentError("sample_without_replacement: k exceeds n");
    std::vector<std::uint32_t> pool(n);
    for (std::uint64_t i = 0; i < n; ++i)
        pool[i] = static_cast<std::uint32_t>(i);
    for (std::uint64_t i = 0; i < k; ++i) {
        const std::uint64_t j = i + rng.next_below(n - i);
        std::swap(pool[i], pool[j]);
    }
    std::vector<std::uint32_t> out(pool.begin(), pool.begin() + static_cast<long>(k));
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace afb
