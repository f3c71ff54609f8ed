#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace diglot {

// Deterministic random source. mt19937_64 raw output is fully specified by the
// standard; the distributions here are hand-rolled so sequences stay stable
// across standard-library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    // Independent stream for (seed, label). Label is hashed with FNV-1a and
    // mixed through splitmix64 so streams for different labels do not overlap
    // in practice.
    static Rng derive(uint64_t seed, std::string_view label) {
        uint64_t h = 1469598103934665603ull;
        for (char c : label) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        uint64_t z = seed + 0x9e3779b97f4a7c15ull * (h | 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return Rng(z ^ (z >> 31));
    }

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 significant bits.
    double next_double() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Unbiased uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        if (n == 0) fail(ErrorKind::invalid_argument, "Rng::below: n must be positive");
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = gen_();
        } while (v >= limit);
        return v % n;
    }

    bool bernoulli(double p) { return next_double() < p; }

    // Box-Muller without the cached spare; two uniforms per draw.
    double normal(double mu = 0.0, double sigma = 1.0) {
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mu + sigma * r * std::cos(2.0 * M_PI * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace diglot
