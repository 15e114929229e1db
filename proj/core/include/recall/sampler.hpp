#pragma once

#include <optional>

#include "recall/bundle.hpp"

namespace recall {

struct GenerationRequest {
    TextPrompt prompt;
    std::optional<Image> image_prompt;
    double guidance_scale = 7.0;
    double init_strength = 0.0;  // 0 = start from pure noise; 1 = fully re-noised image
    std::uint64_t seed = 0;
};

// Generation-time safety steering: push the trajectory away from a concept
// embedding without touching any weights.
struct SafetyGuidance {
    TextEmbedding concept_embedding;
    double scale = 0.0;
};

// Deterministic DDIM update (eta = 0). t_prev == -1 is the terminal step
// (alpha_bar treated as 1). Requires t_prev < t.
Latent ddim_update(const NoiseSchedule& sched, const Latent& z_t, int t, int t_prev,
                   const Latent& eps_hat);

// Classifier-free guided noise estimate, optionally with safety steering.
// guidance 0 reproduces the unconditional estimate, 1 the conditional one.
Latent guided_epsilon(const ConditionalDenoiser& d, const Latent& z_t, int t,
                      const TextEmbedding& h, const Latent* z_cond, double guidance,
                      const SafetyGuidance* safety = nullptr);

// One guided DDIM step; both timesteps must lie on the schedule's grid
// (t_prev may be -1) with t_prev < t.
Latent ddim_step(const NoiseSchedule& sched, const ConditionalDenoiser& d, const Latent& z_t,
                 int t, int t_prev, const TextEmbedding& h, const Latent* z_cond,
                 double guidance, const SafetyGuidance* safety = nullptr);

// Full sampling loop against explicit conditioning inputs. init_from must be
// non-null when init_strength > 0.
Image generate_with_embedding(const ModelBundle& bundle, const TextEmbedding& h,
                              const Latent* z_cond, double guidance, double init_strength,
                              const Latent* init_from, std::uint64_t seed,
                              const SafetyGuidance* safety = nullptr);

// Standard entry point: encodes the prompt (and image prompt, when present,
// used both as conditioning and img2img start if init_strength > 0).
Image generate(const ModelBundle& bundle, const GenerationRequest& req);

// Safety steering the bundle's metadata asks for, if any.
std::optional<SafetyGuidance> safety_for(const ModelBundle& bundle);

}  // namespace recall
