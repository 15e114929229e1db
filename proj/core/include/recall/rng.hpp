#pragma once

#include <cstdint>
#include <random>

namespace recall {

// Deterministic RNG used everywhere in the project. Gaussian draws go through
// our own Box-Muller so sequences are reproducible across platforms and
// standard library versions (std::normal_distribution is not pinned down by
// the standard).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() {
        return (next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive on both ends.
    int uniform_int(int lo, int hi);

    // Standard normal via Box-Muller, one cached spare per pair.
    double normal();

  private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// splitmix64 finalizer; decorrelates nearby seeds.
std::uint64_t mix_u64(std::uint64_t x);

// Stable seed derivation for independent streams, e.g.
// derive_seed(master, prompt_id, seed_idx). Order-sensitive.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

}  // namespace recall
