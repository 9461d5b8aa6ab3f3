#ifndef PCDC_COMMON_HPP
#define PCDC_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pcdc {

// Error hierarchy. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct InfeasibleBudgetError : Error {
    double min_bits;
    InfeasibleBudgetError(const std::string& msg, double min_bits_)
        : Error(msg), min_bits(min_bits_) {}
};

// Deterministic PRNG: xoshiro256** seeded through splitmix64.
// Every stochastic component in the project draws from this generator so
// that runs are bit-reproducible across platforms (the standard library
// distributions are implementation-defined and are not used).
class Rng {
public:
    explicit Rng(uint64_t seed = 0) {
        uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo,hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; consumes two uniforms per pair.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0,1] so log() stays finite.
        double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Derive an independent child generator; `tag` separates call sites.
    Rng fork(uint64_t tag) {
        uint64_t base = next_u64() ^ (tag * 0x9e3779b97f4a7c15ULL);
        return Rng(base);
    }

    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    uint64_t state_[4] = {};
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a over a byte buffer; used as the content hash of checkpoint files.
inline uint64_t content_hash(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace pcdc

#endif
