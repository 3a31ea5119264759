#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "causaldiff/tensor.hpp"

namespace causaldiff {

// Deterministic splitmix64 stream. std:: distributions are implementation
// defined, so all sampling goes through this to keep runs bit-reproducible
// across toolchains. Independent streams are derived by hashing a key path,
// e.g. Rng::derive(seed, kAttack, sample_id, step).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) { next_u64(); }

    static std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
        v *= 0xff51afd7ed558ccdull;
        v ^= v >> 33;
        h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        return h;
    }

    template <class... Parts>
    static Rng derive(std::uint64_t seed, Parts... parts) {
        std::uint64_t h = seed;
        ((h = hash_combine(h, static_cast<std::uint64_t>(parts))), ...);
        return Rng(h);
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (fixed algorithm for portability).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t randint(std::int64_t lo, std::int64_t hi) {
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo + 1);
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(randint(0, static_cast<std::int64_t>(i) - 1));
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

    Tensor normal_tensor(const Shape& shape, double mean = 0.0, double std = 1.0) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        std::vector<double> v(n);
        for (auto& x : v) x = mean + std * normal();
        return Tensor::from(shape, std::move(v));
    }

    Tensor uniform_tensor(const Shape& shape, double lo, double hi) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        std::vector<double> v(n);
        for (auto& x : v) x = uniform(lo, hi);
        return Tensor::from(shape, std::move(v));
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Stream tags so derived streams never collide across subsystems.
enum StreamTag : std::uint64_t {
    kDataGen = 1,
    kSplit = 2,
    kInit = 3,
    kTrain = 4,
    kAttack = 5,
    kPurify = 6,
    kInfer = 7,
    kEval = 8,
    kClub = 9,
    kExport = 10,
};

}  // namespace causaldiff
