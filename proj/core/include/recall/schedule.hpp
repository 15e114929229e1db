#pragma once

#include <vector>

#include "recall/tensor.hpp"

namespace recall {

inline constexpr int kLatentChannels = 4;
inline constexpr int kLatentSize = 8;

// Latent code [4,8,8]; the thin wrapper keeps module boundaries honest.
struct Latent {
    Tensor val{kLatentChannels, kLatentSize, kLatentSize};
};

Latent make_latent();
Latent randn_latent(Rng& rng);

// Linear beta schedule with a deterministic DDIM sub-grid. The grid is
// descending: tau_i = T - 1 - i * (T / ddim_steps).
struct NoiseSchedule {
    int T = 0;
    double beta_start = 0.0, beta_end = 0.0;
    std::vector<double> betas;
    std::vector<double> alpha_bar;  // cumulative product of (1 - beta)
    int ddim_steps = 0;
    std::vector<int> ddim_timesteps;

    // t == -1 is the terminal sentinel and maps to alpha_bar == 1.
    double alpha_bar_at(int t) const;
    bool on_ddim_grid(int t) const;
    int ddim_index_of(int t) const;  // -1 when absent
};

// Throws ConfigError on nonsensical parameters (T not divisible by
// ddim_steps, betas outside (0,1), ddim_steps outside [1,T]).
NoiseSchedule make_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 2e-2,
                            int ddim_steps = 50);

// z_t = sqrt(ab) * z + sqrt(1 - ab) * eps. The raw-ab form exists so the
// ab == 1 identity is testable exactly, not just in the schedule's limit.
Latent add_noise_with_alpha_bar(double alpha_bar, const Latent& z, const Latent& eps);
Latent add_noise(const NoiseSchedule& sched, const Latent& z, int t, const Latent& eps);

}  // namespace recall
