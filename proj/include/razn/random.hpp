#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

namespace razn {

/// splitmix64 finalizer; used as a stateless counter-based generator.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) { return mix64(a ^ mix64(b)); }

/// Maps 64 random bits onto [0, 1) using the top 53 bits.
constexpr double bits_to_unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

/// Random stream keyed by (seed, key): draw i is mix64-derived from the counter, so
/// any subset of streams can be generated in any order and produce the same values.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t key) : base_(hash_combine(seed, key)) {}

    std::uint64_t next_bits() { return mix64(base_ + 0x632be59bd9b4e019ULL * ++counter_); }
    double uniform() { return bits_to_unit(next_bits()); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

private:
    std::uint64_t base_;
    std::uint64_t counter_ = 0;
};

/// Sequential generator with a serializable state, used by the trainer.
/// Distributions are computed here rather than through <random> distribution
/// objects so draws are identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform() { return bits_to_unit(engine_()); }

    std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

    /// Standard normal via Box-Muller (one value per two uniforms, no caching).
    double normal() {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::string state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (!is) throw std::invalid_argument("malformed RNG state");
    }

    bool operator==(const Rng& o) const { return engine_ == o.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace razn
