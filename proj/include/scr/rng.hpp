/**
 * @file rng.hpp
 * @brief Seeded random streams. Every component draws from a named substream of one root seed.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace scr
{
    using Rng = std::mt19937_64;

    inline std::uint64_t splitmix64(std::uint64_t x)
    {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    inline std::uint64_t fnv1a64(std::string_view text)
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : text)
        {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    /// Seed of the named substream (e.g. "tape", "library", "agent", "theory").
    inline std::uint64_t substream_seed(std::uint64_t root, std::string_view name, std::uint64_t index = 0)
    {
        return splitmix64(splitmix64(root ^ fnv1a64(name)) + index);
    }

    inline Rng make_rng(std::uint64_t root, std::string_view name, std::uint64_t index = 0)
    {
        return Rng(substream_seed(root, name, index));
    }

    /// Standard normal draw via Box-Muller on the raw engine output, so results do not
    /// depend on the standard library's distribution implementation.
    inline double standard_normal(Rng &rng)
    {
        constexpr double two_pi = 6.283185307179586476925286766559;
        const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
        const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    inline double uniform01(Rng &rng)
    {
        return static_cast<double>(rng() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n) by rejection (portable across standard libraries).
    inline std::size_t uniform_index(Rng &rng, std::size_t n)
    {
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do
        {
            x = rng();
        } while (x >= limit);
        return static_cast<std::size_t>(x % bound);
    }
}
