#pragma once

#include <cstdint>

namespace moepath {

/// SplitMix64 generator (Steele, Lea & Flood 2014).
///
/// The stream is part of the on-disk reproducibility contract: `gen-model`
/// and `gen-data` outputs depend on these exact constants.
///
///   state += 0x9e3779b97f4a7c15
///   z = (state ^ (state >> 30)) * 0xbf58476d1ce4e5b9
///   z = (z ^ (z >> 27)) * 0x94d049bb133111eb
///   return z ^ (z >> 31)
///
/// uniform() maps the top 53 bits to [0, 1). Child generators are seeded
/// with the parent's next output (fork()).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next();

    /// Uniform double in [0, 1).
    double uniform();

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi);

    /// Unbiased integer in [0, n) by modulo rejection. n must be > 0.
    std::uint64_t below(std::uint64_t n);

    /// Independent child stream; advances this generator by one step.
    Rng fork() { return Rng(next()); }

private:
    std::uint64_t state_;
};

}  // namespace moepath
