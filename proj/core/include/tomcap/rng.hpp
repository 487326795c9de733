#pragma once

#include <cstdint>
#include <random>

namespace tomcap {

/// Seedable generator with a portable output sequence.
///
/// The engine is std::mt19937_64, whose output is fixed by the standard.
/// The standard distributions are not (their algorithms are
/// implementation-defined), so uniform and normal variates are derived here
/// from raw 64-bit draws. Same seed and call order give the same numbers on
/// every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform();

    /// Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t uniform_index(std::uint64_t bound);

    /// Standard normal via the Box-Muller transform; consumes two draws per call.
    double normal();

private:
    std::mt19937_64 engine_;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Seed for item `index` of stream `stream` under a run's master seed.
/// Depends only on its arguments, so per-item randomness is independent of
/// processing order and thread count.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index);

/// Stream tags used by the pipeline when deriving per-item seeds.
namespace streams {
inline constexpr std::uint64_t kQueryNoise = 1;
inline constexpr std::uint64_t kDatastoreNoise = 2;
inline constexpr std::uint64_t kDecoderNoise = 3;
inline constexpr std::uint64_t kOrdering = 4;
} // namespace streams

} // namespace tomcap
