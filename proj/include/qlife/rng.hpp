#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace qlife {

// Seeded PRNG wrapper. The mt19937_64 core is specified bit-exactly by the
// standard; the uniform/normal transforms below are hand-rolled so that
// sampled values (and therefore datasets, weight inits and training runs)
// do not depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : gen_(seed ^ 0x9e3779b97f4a7c15ull) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    float uniform_f(float lo, float hi) { return static_cast<float>(uniform(lo, hi)); }

    // Standard normal via Box-Muller (no cached second value).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Integer in [0, n). Modulo bias is < n / 2^64, irrelevant at our scales.
    std::uint64_t below(std::uint64_t n) { return n ? gen_() % n : 0; }

    bool bernoulli(double p) { return uniform() < p; }

    // Independent substream; distinct `stream` values give unrelated sequences.
    Rng fork(std::uint64_t stream) {
        std::uint64_t s = gen_() ^ (0xbf58476d1ce4e5b9ull * (stream + 1));
        return Rng(s);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace qlife
