#pragma once

#include <array>
#include <cstdint>

namespace qtun {

constexpr std::uint64_t splitmix64(std::uint64_t& x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    auto z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Counter-based uniform in [0,1) for event `index` under `seed`.
/// Independent of evaluation order, so chunked callers get identical draws.
constexpr double counter_uniform(std::uint64_t seed, std::uint64_t index) noexcept {
    std::uint64_t x = seed ^ (index * 0xD1B54A32D192ED03ULL);
    splitmix64(x);
    const auto r = splitmix64(x);
    return static_cast<double>(r >> 11) * 0x1.0p-53;
}

/// xoshiro256++ (Blackman & Vigna), 256-bit state seeded through SplitMix64.
class Xoshiro256pp {
public:
    using result_type = std::uint64_t;

    constexpr explicit Xoshiro256pp(std::uint64_t seed = 1) noexcept {
        auto x = seed;
        for (auto& v : s_) {
            v = splitmix64(x);
        }
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    constexpr result_type operator()() noexcept {
        const auto result = rotl(s_[0] + s_[3], 23) + s_[0];
        const auto t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // [0,1), 53-bit resolution
    constexpr double uniform01() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    // (0,1], safe for log()
    constexpr double uniform_open0() noexcept {
        return static_cast<double>(((*this)() >> 11) + 1) * 0x1.0p-53;
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

    std::array<std::uint64_t, 4> s_{};
};

} // namespace qtun
