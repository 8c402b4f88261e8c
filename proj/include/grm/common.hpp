#pragma once
// Shared error types, seeded RNG, and small helpers used across the library.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace grm {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct TapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An operation produced NaN/Inf. Stored tensors must stay finite.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A softmax row had no admissible entries (invalid division upstream).
struct DegenerateRowError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training aborted on a non-finite loss; carries epoch/step context.
struct TrainAbortError : std::runtime_error {
    int epoch = -1;
    int step = -1;
    TrainAbortError(const std::string& msg, int ep, int st)
        : std::runtime_error(msg), epoch(ep), step(st) {}
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic RNG. All transforms are explicit so that a (seed, call
// sequence) pair reproduces byte-identical streams across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    // Box-Muller; consumes two uniforms per pair, caches the second.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return mag * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Standard Gumbel(0,1) via inverse CDF.
    double gumbel() {
        double u = uniform();
        if (u < 1e-300) u = 1e-300;
        return -std::log(-std::log(u));
    }

    std::uint64_t next_u64() { return gen_(); }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stable seed derivation for per-component RNG streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t x = base ^ (0x9e3779b97f4a7c15ULL + stream * 0xbf58476d1ce4e5b9ULL);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

// FNV-1a over raw bytes; used for config digests and golden checksums.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a_str(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a(s.data(), s.size(), h);
}

}  // namespace grm
