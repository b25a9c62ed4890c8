#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace isorec {

using real = double;

// Error taxonomy used across the toolkit. The CLI maps ConfigError to
// exit code 1 and everything else to 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// splitmix64, used to derive independent sub-streams from one user seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic RNG wrapper. Gaussian draws use an explicit Box-Muller
// transform instead of std::normal_distribution so the byte-level stream
// does not depend on the standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // uniform in [0, 1)
    real uniform() {
        return real(eng_() >> 11) * 0x1.0p-53;
    }
    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::int64_t uniform_int(std::int64_t n) {
        return std::int64_t(uniform() * real(n)) % n;
    }

    real normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        real u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const real r = std::sqrt(-2.0 * std::log(u1));
        const real a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Independent generator for sub-stream `stream` of this rng's seed.
    Rng fork(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    real spare_ = 0;
};

}  // namespace isorec
