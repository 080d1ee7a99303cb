#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>

namespace latsched::substrate {

// Deterministic counter-based PCG32 stream. One root seed fans out to named
// sub-streams (env, init, sampling, channel, ...) so modules stay isolated:
// drawing more numbers in one stream never shifts another.
class RngStream {
public:
    RngStream() : state_(0x853c49e6748fea9bULL), inc_(0xda3e39cb94b95bdbULL) {}
    RngStream(uint64_t seed, uint64_t seq) { reseed(seed, seq); }

    void reseed(uint64_t seed, uint64_t seq) {
        state_ = 0;
        inc_ = (seq << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Uniform in [0,1) with 53-bit resolution.
    double uniform() {
        uint64_t bits = next_u64() >> 11;
        return static_cast<double>(bits) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without caching the spare; two uniforms per draw keeps the
    // stream position a pure function of the draw count.
    double normal() {
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Truncated at +/- 2 sigma by rejection.
    double truncated_normal(double stddev) {
        for (;;) {
            double x = normal();
            if (x > -2.0 && x < 2.0) return x * stddev;
        }
    }

    // Uniform integer in [0, n).
    uint32_t below(uint32_t n) {
        uint64_t m = static_cast<uint64_t>(next_u32()) * n;
        return static_cast<uint32_t>(m >> 32);
    }

private:
    uint64_t state_;
    uint64_t inc_;
};

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 1469598103934665603ULL;
    for (char c : s) {
        h ^= static_cast<uint8_t>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive a named sub-stream from a root seed.
inline RngStream derive_stream(uint64_t root_seed, std::string_view name) {
    uint64_t h = fnv1a(name);
    return RngStream(splitmix64(root_seed ^ h), splitmix64(h));
}

// Stateless hash noise: uniform in [0,1) keyed by (seed, a, b, c).
inline double hash_uniform(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
    uint64_t x = splitmix64(seed ^ splitmix64(a ^ splitmix64(b ^ splitmix64(c + 0x1234567ULL))));
    return static_cast<double>(x >> 11) * (1.0 / 9007199254740992.0);
}

// Standard normal from the same keyed hash.
inline double hash_normal(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
    double u1 = 1.0 - hash_uniform(seed, a, b, c);
    double u2 = hash_uniform(seed ^ 0x5bf0a8b1ULL, a, b, c);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

} // namespace latsched::substrate
