#ifndef UEDPO_RNG_HPP
#define UEDPO_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

namespace uedpo {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Counter-based random stream. The value drawn at position n depends only on
/// (key, n), so streams keyed by e.g. (seed, pair_id, step) can be consumed in
/// any order or on any thread and still produce identical numbers. The
/// generators are self-contained so output is identical across standard
/// library implementations.
class Stream {
public:
    explicit constexpr Stream(std::uint64_t seed) noexcept : key_(splitmix64(seed)) {}
    constexpr Stream(std::uint64_t seed, std::uint64_t a) noexcept : Stream(seed) { key_ = splitmix64(key_ ^ splitmix64(a + 0x1234567ULL)); }
    constexpr Stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept : Stream(seed, a) {
        key_ = splitmix64(key_ ^ splitmix64(b + 0x7654321ULL));
    }

    constexpr std::uint64_t next_u64() noexcept { return splitmix64(key_ ^ splitmix64(counter_++)); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Uses rejection to stay unbiased.
    std::uint64_t below(std::uint64_t n) noexcept {
        const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller (one variate per call).
    double normal() noexcept {
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    constexpr std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace uedpo

#endif // UEDPO_RNG_HPP
