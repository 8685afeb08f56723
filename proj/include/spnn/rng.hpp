#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace spnn {

// Counter-based generator: out_i = mix(key, i). The integer stream depends
// only on (seed, call index), never on platform word order or library state,
// so seeded runs replay exactly. split() derives an independent child stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed, 0x7f4a7c15ULL)) {}

    std::uint64_t next_u64() { return mix(key_, counter_++); }

    Rng split() {
        Rng child(0);
        child.key_ = mix(key_ ^ 0x9e3779b97f4a7c15ULL, counter_++);
        child.counter_ = 0;
        child.have_normal_ = false;
        return child;
    }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; second value cached so the draw count stays deterministic
    double normal() {
        if (have_normal_) {
            have_normal_ = false;
            return cached_normal_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        double rad = std::sqrt(-2.0 * std::log(u1));
        double ang = 6.283185307179586476925286766559 * u2;
        cached_normal_ = rad * std::sin(ang);
        have_normal_ = true;
        return rad * std::cos(ang);
    }

    void fill_normal(std::vector<double>& v) {
        for (auto& x : v)
            x = normal();
    }

    void fill_uniform(std::vector<double>& v, double lo, double hi) {
        for (auto& x : v)
            x = uniform(lo, hi);
    }

private:
    static std::uint64_t mix(std::uint64_t key, std::uint64_t ctr) {
        std::uint64_t z = key + ctr * 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    bool have_normal_ = false;
    double cached_normal_ = 0.0;
};

}  // namespace spnn
