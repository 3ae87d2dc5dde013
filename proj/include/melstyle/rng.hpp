#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace melstyle {

// Deterministic, platform-independent random stream (splitmix64 core).
// All randomness in the project flows through named substreams derived
// from one master seed, so every component is reproducible in isolation.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t hash_name(const std::string& name) {
        // FNV-1a
        uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : name) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    // Named substream: rng for one component, independent of call order
    // elsewhere.
    static Rng substream(uint64_t master_seed, const std::string& name) {
        return Rng(mix(master_seed, hash_name(name)));
    }

    Rng substream(const std::string& name) const {
        return Rng(mix(state_, hash_name(name)));
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller (pair cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return r * std::cos(th);
    }

    template <typename T>
    void fill_normal(std::vector<T>& v) {
        for (auto& x : v) x = static_cast<T>(normal());
    }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) {
        state_ = s;
        have_spare_ = false;
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace melstyle
