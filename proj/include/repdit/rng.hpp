#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>

namespace repdit {

// Counter-based deterministic generator.
//
// Draw i of a stream with seed s is
//     finalize(s + (i+1) * 0x9E3779B97F4A7C15)
// where finalize is the splitmix64 output mix. The state is just (seed,
// counter), so any draw is reproducible from its index alone and identical
// across platforms with IEEE-754 doubles. Sub-streams are derived with
// derive(seed, tag), which runs the same mix over seed ^ tag.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {}

    uint64_t next_u64() {
        counter_ += 1;
        return finalize(seed_ + counter_ * GOLDEN);
    }

    // uniform in (0, 1]
    double uniform() {
        return double((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // standard normal via Box-Muller; consumes two uniforms per pair
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) {
        return uint64_t((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    void fill_normal(std::span<double> out) {
        for (double& v : out) v = normal();
    }

    static uint64_t derive(uint64_t seed, uint64_t tag) {
        return finalize((seed ^ tag) + GOLDEN);
    }

    // FNV-1a, for deriving per-parameter init streams from names
    static uint64_t hash_name(std::string_view name) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        return h;
    }

private:
    static constexpr uint64_t GOLDEN = 0x9E3779B97F4A7C15ull;

    static uint64_t finalize(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace repdit
