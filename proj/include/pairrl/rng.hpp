#pragma once
// Deterministic randomness. mt19937_64 supplies bits; the value transforms
// (uniform, normal, categorical) are hand-rolled because the standard
// distribution objects are not bit-stable across library implementations,
// and run-to-run identical streams are a hard requirement here.

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "pairrl/common.hpp"

namespace pairrl {

// splitmix64 step; used to mix tags and indices into stream seeds.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from (root, tag, index). Distinct tags
// give unrelated streams, so e.g. world generation never shares bits with
// rollout sampling.
inline uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t index = 0) {
    uint64_t h = splitmix64(root);
    for (char c : tag) {
        h = splitmix64(h ^ static_cast<uint64_t>(static_cast<unsigned char>(c)));
    }
    return splitmix64(h ^ index);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; caches the second value.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n); rejection sampling keeps it unbiased.
    int uniform_int(int n) {
        if (n <= 0) throw ValidationError("uniform_int: n must be positive");
        uint64_t un = static_cast<uint64_t>(n);
        uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x = 0;
        do {
            x = eng_();
        } while (x >= limit);
        return static_cast<int>(x % un);
    }

    // Index sampled from unnormalized non-negative weights.
    int categorical(const std::vector<double>& w) {
        double total = 0.0;
        for (double v : w) total += v;
        if (!(total > 0.0)) throw NumericError("categorical: weights sum to zero");
        double u = uniform() * total;
        double acc = 0.0;
        for (size_t i = 0; i < w.size(); ++i) {
            acc += w[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(w.size() - 1);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), order randomized.
    std::vector<int> sample_without_replacement(int n, int k) {
        if (k > n) throw ValidationError("sample_without_replacement: k > n");
        std::vector<int> pool(n);
        for (int i = 0; i < n; ++i) pool[i] = i;
        for (int i = 0; i < k; ++i) {
            int j = i + uniform_int(n - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace pairrl
