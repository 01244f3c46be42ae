#pragma once

// Seeded random streams. Every random draw in the project flows from one
// root seed through named sub-streams so that runs are reproducible and
// independent stages never share state. Distributions are implemented here
// rather than taken from <random> so that sequences are identical across
// standard libraries.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace cocon {

// FNV-1a, used to fold stream names into seeds.
inline uint64_t hash_name(std::string_view name) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : name) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t mix_u64(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

class RngStream {
public:
    RngStream() : engine_(0) {}
    explicit RngStream(uint64_t seed) : engine_(seed) {}

    // Named sub-stream: (seed, "mask", step, slot) and friends.
    static RngStream substream(uint64_t seed, std::string_view name,
                               uint64_t a = 0, uint64_t b = 0) {
        uint64_t s = mix_u64(seed ^ hash_name(name));
        s = mix_u64(s ^ (a + 0x517cc1b727220a95ull));
        s = mix_u64(s ^ (b + 0x2545f4914f6cdd1dull));
        return RngStream(s);
    }

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, n). Modulo bias is negligible for the n used here and
    // the method is fixed, which is what reproducibility needs.
    uint64_t next_below(uint64_t n) { return n == 0 ? 0 : engine_() % n; }

    size_t index_below(size_t n) { return static_cast<size_t>(next_below(n)); }

    // Uniform in [0, 1) with 53 bits.
    double next_double() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    bool bernoulli(double p) { return next_double() < p; }

    double normal(double mean = 0.0, double stddev = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        // Box-Muller; 1-u keeps log away from 0.
        double u = 1.0 - next_double();
        double v = next_double();
        double r = std::sqrt(-2.0 * std::log(u));
        double theta = 2.0 * 3.141592653589793238462643383279502884 * v;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = index_below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cocon
