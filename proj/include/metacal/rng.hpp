#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace metacal {

// Deterministic random stream used for every randomized stage.
//
// Built on splitmix64 so that identical seeds produce identical byte
// streams on every platform; std::uniform_*_distribution is
// implementation-defined and would break cross-run artifact digests.
// Streams are cheap values: fork() derives an independent child stream
// from the parent's seed and a label, so work items keyed by e.g.
// (seed, question_id, sample_index) are reproducible regardless of
// scheduling order.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Unbiased integer in [0, n); rejection sampling on the top range.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = ~0ULL - (~0ULL % n);
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Standard normal via Box-Muller; draws two uniforms per call so the
    // stream position does not depend on hidden cached state.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

    // Child stream derived from this stream's seed and a label. Forking is
    // a pure function of (seed, label): it does not consume from or depend
    // on the parent's current position.
    RngStream fork(std::string_view label) const {
        return RngStream(mix(seed_, fnv1a(label)));
    }

    RngStream fork(std::uint64_t label) const { return RngStream(mix(seed_, label)); }

    static std::uint64_t fnv1a(std::string_view text) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const char c : text) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

private:
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        // One splitmix64 round over the combination keeps forks decorrelated.
        std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t state_;
};

}  // namespace metacal
