#pragma once

#include <string>
#include <vector>

#include "recall/bundle.hpp"
#include "recall/detector.hpp"
#include "recall/sampler.hpp"

namespace recall {

enum class UpdateSign { descend = 0, ascend = 1 };
enum class BaselineKind { text_only = 0, image_only = 1, text_noise = 2, text_image = 3 };

const char* baseline_name(BaselineKind k);
BaselineKind parse_baseline(const std::string& s);

struct AttackConfig {
    double lambda_blend = 0.25;      // reference weight in the blended init
    double eta_step = 1e-3;          // sign-step size
    double beta_momentum = 0.9;
    double omega = 1e-8;             // L1 normalizer floor
    double gamma_integrate = 0.05;   // periodic reference integration weight
    int n_inner = 20;                // optimizer iterations per timestep
    int epoch_interval = 5;          // integrate when the descending step count divides this
    int ddim_steps = 50;             // attack timestep grid
    UpdateSign update_sign = UpdateSign::descend;
    int early_stop_every = 1;        // generation + detector check cadence
    bool refresh_gradient_each_inner = true;  // false reuses one gradient per timestep
    double guidance_scale = 7.0;     // for the early-stop generations
    std::uint64_t seed = 0;
};

void validate_attack_config(const AttackConfig& cfg);

struct AttackResult {
    bool success = false;
    int steps_used = 0;
    double wall_time_s = 0.0;
    Image adversarial_image;  // decoded adversarial image prompt
    Image final_image;        // what generation produced from it
    double detector_prob = 0.0;
    double alignment = 0.0;   // 100 * cosine(final features, target prototype)
    TextPrompt prompt;
    std::uint64_t seed = 0;
    std::string method;
    std::vector<double> loss_history;
};

// Blended starting point lambda * reference + (1 - lambda) * N(0,1) noise.
// Values are intentionally not clamped to [0,1].
Image init_image_prompt(const Image& reference, double lambda, std::uint64_t seed);

// Mean squared gap between the two noise estimates.
double adversarial_loss(const Latent& eps_ref, const Latent& eps_adv);

// v = beta * v_prev + grad / (||grad||_1 + omega)
Latent momentum_update(const Latent& v_prev, const Latent& grad, double beta, double omega);

// descend: z - eta * sign(v); ascend: z + eta * sign(v). sign(0) == 0.
Latent pgd_step(const Latent& z, const Latent& v, double eta, UpdateSign dir);

Latent integrate_reference(const Latent& z_adv, const Latent& z_ref, double gamma);

// Momentum-PGD over the adversarial image-prompt latent, walking the DDIM
// grid from the noisiest step down, matching the reference branch's noise
// estimate, periodically blending the reference back in, and stopping as soon
// as a generation conditioned on the decoded latent trips the detector.
AttackResult recall_attack(const ModelBundle& bundle, const TextPrompt& prompt,
                           const Image& reference, const AttackConfig& cfg,
                           const Detector& det);

AttackResult run_baseline(BaselineKind kind, const ModelBundle& bundle, const TextPrompt& prompt,
                          const Image& reference, std::uint64_t seed, const Detector& det,
                          double guidance = 7.0);

}  // namespace recall
