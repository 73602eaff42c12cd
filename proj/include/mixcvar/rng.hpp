#pragma once

#include <cstdint>
#include <random>

#include "mixcvar/distn.hpp"

namespace mixcvar {

/// Seedable, splittable random stream.
///
/// A stream is addressed by (seed, stream_id): the pair is mixed through
/// SplitMix64 into the state of a mt19937_64 engine, so
///   * the same (seed, stream_id) always reproduces the same sequence, and
///   * distinct stream ids under one seed give statistically independent
///     sequences, which is how parallel replications and EM restarts obtain
///     private generators.
/// Gaussian variates are produced by inverse-cdf transform of the engine's
/// uniforms, keeping sequences identical across platforms.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0) {
        std::uint64_t s = mix(seed ^ mix(stream_id + 0x9e3779b97f4a7c15ull));
        std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32),
                          static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream_id),
                          static_cast<std::uint32_t>(stream_id >> 32)};
        engine_.seed(seq);
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform draw strictly inside (0,1).
    double uniform01() {
        const std::uint64_t bits = engine_() >> 11;  // 53 random bits
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal draw via the inverse cdf.
    double gaussian() { return normal_quantile(Probability(uniform01())); }

  private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::mt19937_64 engine_;
};

}  // namespace mixcvar
