#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace gmsl {

// Deterministic RNG used everywhere randomness is needed. std::mt19937_64 has
// a standard-fixed output sequence; the mapping to doubles is done by hand
// because std::uniform_real_distribution is implementation-defined and would
// break bit-exact reproducibility across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53 bits of entropy.
    double next_double() {
        return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n). Modulo bias is irrelevant here; determinism is
    // what matters.
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

    // Fisher-Yates with the portable integer draw above.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// Stateless per-epoch seed derivation (splitmix64 finalizer). Lets a resumed
// training run replay the exact shuffle sequence without serializing RNG state.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace gmsl
