#include "recall/sampler.hpp"

#include <cmath>

#include "recall/errors.hpp"

namespace recall {

namespace {
constexpr std::uint64_t kGenStream = 0x67656e6572617465ULL;
}

Latent ddim_update(const NoiseSchedule& sched, const Latent& z_t, int t, int t_prev,
                   const Latent& eps_hat) {
    if (t_prev >= t) throw ConfigError("ddim_update: t_prev must be below t");
    double ab_t = sched.alpha_bar_at(t);
    double ab_prev = sched.alpha_bar_at(t_prev);
    double sa_t = std::sqrt(ab_t);
    double sb_t = std::sqrt(1.0 - ab_t);
    double sa_p = std::sqrt(ab_prev);
    double sb_p = std::sqrt(1.0 - ab_prev);
    Latent out;
    for (int i = 0; i < out.val.size(); ++i) {
        double x0 = (z_t.val.v[i] - sb_t * eps_hat.val.v[i]) / sa_t;
        out.val.v[i] = sa_p * x0 + sb_p * eps_hat.val.v[i];
    }
    if (!all_finite(out.val)) throw NumericsError("ddim_update: non-finite latent");
    return out;
}

Latent guided_epsilon(const ConditionalDenoiser& d, const Latent& z_t, int t,
                      const TextEmbedding& h, const Latent* z_cond, double guidance,
                      const SafetyGuidance* safety) {
    bool need_uncond = guidance != 1.0 || (safety && safety->scale != 0.0);
    Latent eps_c = predict_noise(d, z_t, t, h, z_cond);
    if (!need_uncond) return eps_c;

    Latent eps_u = predict_noise(d, z_t, t, null_text_embedding(), nullptr);
    Latent eps;
    for (int i = 0; i < eps.val.size(); ++i)
        eps.val.v[i] = eps_u.val.v[i] + guidance * (eps_c.val.v[i] - eps_u.val.v[i]);

    if (safety && safety->scale != 0.0) {
        Latent eps_s = predict_noise(d, z_t, t, safety->concept_embedding, nullptr);
        for (int i = 0; i < eps.val.size(); ++i)
            eps.val.v[i] -= safety->scale * (eps_s.val.v[i] - eps_u.val.v[i]);
    }
    return eps;
}

Latent ddim_step(const NoiseSchedule& sched, const ConditionalDenoiser& d, const Latent& z_t,
                 int t, int t_prev, const TextEmbedding& h, const Latent* z_cond,
                 double guidance, const SafetyGuidance* safety) {
    if (!sched.on_ddim_grid(t)) throw ConfigError("ddim_step: t not on the DDIM grid");
    if (t_prev != -1 && !sched.on_ddim_grid(t_prev))
        throw ConfigError("ddim_step: t_prev not on the DDIM grid");
    if (t_prev >= t) throw ConfigError("ddim_step: t_prev must be below t");
    Latent eps = guided_epsilon(d, z_t, t, h, z_cond, guidance, safety);
    return ddim_update(sched, z_t, t, t_prev, eps);
}

Image generate_with_embedding(const ModelBundle& bundle, const TextEmbedding& h,
                              const Latent* z_cond, double guidance, double init_strength,
                              const Latent* init_from, std::uint64_t seed,
                              const SafetyGuidance* safety) {
    const NoiseSchedule& sched = bundle.schedule;
    if (!(init_strength >= 0.0 && init_strength <= 1.0))
        throw ConfigError("generate: init_strength outside [0,1]");
    if (init_strength > 0.0 && !init_from)
        throw ConfigError("generate: init_strength > 0 requires an init latent");

    int K = sched.ddim_steps;
    Rng rng(derive_seed(seed, kGenStream));
    Latent z;
    int start = 0;
    if (init_strength == 0.0) {
        z = randn_latent(rng);
    } else {
        int steps = static_cast<int>(std::lround(init_strength * K));
        start = K - steps;
        if (steps == 0) {
            z = *init_from;
        } else {
            Latent eps = randn_latent(rng);
            z = add_noise(sched, *init_from, sched.ddim_timesteps[start], eps);
        }
    }
    for (int i = start; i < K; ++i) {
        int t = sched.ddim_timesteps[i];
        int t_prev = (i + 1 < K) ? sched.ddim_timesteps[i + 1] : -1;
        z = ddim_step(sched, bundle.denoiser, z, t, t_prev, h, z_cond, guidance, safety);
    }
    return bundle.codec.decode(z);
}

std::optional<SafetyGuidance> safety_for(const ModelBundle& bundle) {
    if (bundle.meta.method != UnlearnMethod::sld_guidance || bundle.meta.sld_safety_scale == 0.0)
        return std::nullopt;
    if (!bundle.meta.erased_concept)
        throw ConfigError("safety_for: sld bundle without an erased concept");
    // Concept direction: mean embedding of the erased shape over all colors.
    SafetyGuidance safety;
    Vec acc(kTextEmbedDim, 0.0);
    for (int c = 0; c < kNumColors; ++c) {
        TextEmbedding e = bundle.text.encode(
            make_prompt(*bundle.meta.erased_concept, static_cast<ColorName>(c)));
        for (int i = 0; i < kTextEmbedDim; ++i) acc[i] += e.v[i];
    }
    for (double& x : acc) x /= kNumColors;
    safety.concept_embedding.v = acc;
    safety.scale = bundle.meta.sld_safety_scale;
    return safety;
}

Image generate(const ModelBundle& bundle, const GenerationRequest& req) {
    TextEmbedding h = bundle.text.encode(req.prompt);
    std::optional<Latent> z_cond;
    if (req.image_prompt) z_cond = bundle.codec.encode(*req.image_prompt);
    auto safety = safety_for(bundle);
    return generate_with_embedding(bundle, h, z_cond ? &*z_cond : nullptr, req.guidance_scale,
                                   req.init_strength, z_cond ? &*z_cond : nullptr, req.seed,
                                   safety ? &*safety : nullptr);
}

}  // namespace recall
