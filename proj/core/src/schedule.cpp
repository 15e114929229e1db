#include "recall/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "recall/errors.hpp"

namespace recall {

Latent make_latent() { return Latent{}; }

Latent randn_latent(Rng& rng) {
    Latent z;
    z.val = randn(kLatentChannels, kLatentSize, kLatentSize, rng);
    return z;
}

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t == -1) return 1.0;
    if (t < 0 || t >= T) throw ConfigError("alpha_bar_at: t out of range");
    return alpha_bar[t];
}

bool NoiseSchedule::on_ddim_grid(int t) const { return ddim_index_of(t) >= 0; }

int NoiseSchedule::ddim_index_of(int t) const {
    for (int i = 0; i < static_cast<int>(ddim_timesteps.size()); ++i)
        if (ddim_timesteps[i] == t) return i;
    return -1;
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, int ddim_steps) {
    if (T < 2) throw ConfigError("make_schedule: T must be at least 2");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
        throw ConfigError("make_schedule: betas must satisfy 0 < start <= end < 1");
    if (ddim_steps < 1 || ddim_steps > T)
        throw ConfigError("make_schedule: ddim_steps must lie in [1, T]");
    if (T % ddim_steps != 0)
        throw ConfigError("make_schedule: ddim_steps must divide T");

    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.betas.resize(T);
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        s.betas[t] = beta_start + (beta_end - beta_start) * t / (T - 1);
        prod *= 1.0 - s.betas[t];
        s.alpha_bar[t] = prod;
    }
    for (int t = 1; t < T; ++t)
        if (!(s.alpha_bar[t] < s.alpha_bar[t - 1]))
            throw NumericsError("make_schedule: alpha_bar not strictly decreasing");

    s.ddim_steps = ddim_steps;
    int stride = T / ddim_steps;
    s.ddim_timesteps.resize(ddim_steps);
    for (int i = 0; i < ddim_steps; ++i) s.ddim_timesteps[i] = T - 1 - i * stride;
    return s;
}

Latent add_noise_with_alpha_bar(double alpha_bar, const Latent& z, const Latent& eps) {
    if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0))
        throw ConfigError("add_noise_with_alpha_bar: alpha_bar outside [0,1]");
    double a = std::sqrt(alpha_bar);
    double b = std::sqrt(1.0 - alpha_bar);
    Latent out;
    for (int i = 0; i < out.val.size(); ++i) out.val.v[i] = a * z.val.v[i] + b * eps.val.v[i];
    return out;
}

Latent add_noise(const NoiseSchedule& sched, const Latent& z, int t, const Latent& eps) {
    if (t < 0 || t >= sched.T) throw ConfigError("add_noise: t out of range");
    return add_noise_with_alpha_bar(sched.alpha_bar[t], z, eps);
}

}  // namespace recall
