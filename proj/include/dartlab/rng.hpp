#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace dartlab {

std::uint64_t fnv1a64(std::string_view s);
std::uint64_t splitmix64(std::uint64_t x);

/// Child seed for a named stream. Same (master, label) always gives the same
/// seed; distinct labels give statistically independent streams.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

/// Deterministic seeding policy for a whole experiment: every random draw in
/// a run comes from a stream labelled like "branch:3" or "init".
struct RngPolicy {
    std::uint64_t master_seed = 0;

    std::uint64_t derive(std::string_view label) const {
        return derive_seed(master_seed, label);
    }
    std::mt19937_64 stream(std::string_view label) const {
        return std::mt19937_64(derive(label));
    }
};

}  // namespace dartlab
