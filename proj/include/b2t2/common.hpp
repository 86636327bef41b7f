#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace b2t2 {

// Error hierarchy. The CLI maps these to exit codes: contract/data -> 2,
// divergence -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct VocabError : Error {
    using Error::Error;
};
struct BoxError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct CheckpointError : Error {
    using Error::Error;
};
struct DivergedError : Error {
    using Error::Error;
};

// splitmix64, used to derive independent rng streams from a master seed.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + stream * 0x9e3779b97f4a7c15ULL + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return Rng(split_seed(seed, stream));
}

}  // namespace b2t2
