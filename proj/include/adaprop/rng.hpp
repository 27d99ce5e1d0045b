#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace adaprop {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG wrapper. Uniform doubles are built from raw 64-bit draws
// instead of std::uniform_real_distribution, whose output is implementation
// defined; this keeps runs reproducible across standard libraries.
class Rng {
public:
    Rng() : gen_(0) {}
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Stream for one query: mixes the global seed with the query's index so
    // per-query draws are independent of iteration or worker order.
    static Rng for_stream(std::uint64_t seed, std::uint64_t stream) {
        return Rng(splitmix64(splitmix64(seed) ^ (0x517cc1b727220a95ULL * (stream + 1))));
    }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1): rejects exact zero so log(u) is always finite.
    double uniform_open() {
        for (;;) {
            double u = uniform();
            if (u > 0.0) return u;
        }
    }

    double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard Gumbel(0,1) noise.
    double gumbel() { return -std::log(-std::log(uniform_open())); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        for (;;) {
            std::uint64_t x = gen_();
            if (x < limit) return x % n;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // mt19937_64 has standardized textual state; used for checkpoints.
    std::string state_string() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void set_state_string(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace adaprop
