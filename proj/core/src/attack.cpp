#include "recall/attack.hpp"

#include <chrono>
#include <cmath>

#include "recall/errors.hpp"

namespace recall {

namespace {

constexpr std::uint64_t kInitStream = 0xadf00101;
constexpr std::uint64_t kEpsStream = 0xadf00202;
constexpr std::uint64_t kGenStream = 0xadf00303;
constexpr std::uint64_t kNoiseStream = 0xadf00404;

double alignment_of(const Detector& det, const Image& img, ShapeClass target) {
    return 100.0 * cosine_similarity(det.features(img), det.prototypes[static_cast<int>(target)]);
}

ShapeClass require_prompt_shape(const TextPrompt& prompt, const char* who) {
    auto s = prompt_shape(prompt);
    if (!s) throw ConfigError(std::string(who) + ": prompt names no shape class");
    return *s;
}

}  // namespace

const char* baseline_name(BaselineKind k) {
    switch (k) {
        case BaselineKind::text_only: return "text_only";
        case BaselineKind::image_only: return "image_only";
        case BaselineKind::text_noise: return "text_noise";
        case BaselineKind::text_image: return "text_image";
    }
    throw ConfigError("baseline_name: bad kind");
}

BaselineKind parse_baseline(const std::string& s) {
    for (int i = 0; i < 4; ++i)
        if (s == baseline_name(static_cast<BaselineKind>(i))) return static_cast<BaselineKind>(i);
    throw ConfigError("unknown baseline '" + s + "'");
}

void validate_attack_config(const AttackConfig& cfg) {
    if (!(cfg.lambda_blend >= 0.0 && cfg.lambda_blend <= 1.0))
        throw ConfigError("attack: lambda_blend outside [0,1]");
    if (!(cfg.eta_step > 0.0)) throw ConfigError("attack: eta_step must be positive");
    if (!(cfg.beta_momentum >= 0.0 && cfg.beta_momentum < 1.0))
        throw ConfigError("attack: beta_momentum outside [0,1)");
    if (!(cfg.omega > 0.0)) throw ConfigError("attack: omega must be positive");
    if (cfg.gamma_integrate < 0.0) throw ConfigError("attack: gamma_integrate must be >= 0");
    if (cfg.n_inner < 0) throw ConfigError("attack: n_inner must be >= 0");
    if (cfg.epoch_interval < 1) throw ConfigError("attack: epoch_interval must be >= 1");
    if (cfg.ddim_steps < 1) throw ConfigError("attack: ddim_steps must be >= 1");
    if (cfg.early_stop_every < 1) throw ConfigError("attack: early_stop_every must be >= 1");
}

Image init_image_prompt(const Image& reference, double lambda, std::uint64_t seed) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw ConfigError("init_image_prompt: lambda outside [0,1]");
    Rng rng(derive_seed(seed, kInitStream));
    Image out;
    for (int i = 0; i < out.pix.size(); ++i)
        out.pix.v[i] = lambda * reference.pix.v[i] + (1.0 - lambda) * rng.normal();
    return out;
}

double adversarial_loss(const Latent& eps_ref, const Latent& eps_adv) {
    Tensor diff = sub(eps_ref.val, eps_adv.val);
    return sum_sq(diff) / diff.size();
}

Latent momentum_update(const Latent& v_prev, const Latent& grad, double beta, double omega) {
    if (!all_finite(grad.val)) throw NumericsError("momentum_update: non-finite gradient");
    double l1 = l1_norm(grad.val);
    Latent v;
    double inv = 1.0 / (l1 + omega);
    for (int i = 0; i < v.val.size(); ++i)
        v.val.v[i] = beta * v_prev.val.v[i] + grad.val.v[i] * inv;
    return v;
}

Latent pgd_step(const Latent& z, const Latent& v, double eta, UpdateSign dir) {
    double step = (dir == UpdateSign::descend) ? -eta : eta;
    Latent out = z;
    for (int i = 0; i < out.val.size(); ++i) {
        double s = (v.val.v[i] > 0.0) ? 1.0 : (v.val.v[i] < 0.0 ? -1.0 : 0.0);
        out.val.v[i] += step * s;
    }
    return out;
}

Latent integrate_reference(const Latent& z_adv, const Latent& z_ref, double gamma) {
    Latent out = z_adv;
    axpy(gamma, z_ref.val, out.val);
    return out;
}

AttackResult recall_attack(const ModelBundle& bundle, const TextPrompt& prompt,
                           const Image& reference, const AttackConfig& cfg,
                           const Detector& det) {
    validate_attack_config(cfg);
    ShapeClass target = require_prompt_shape(prompt, "recall_attack");

    auto [ref_prob, ref_ok] = detect(det, reference, target);
    if (!ref_ok)
        throw GateError("recall_attack: reference image fails the detector precheck (p=" +
                        std::to_string(ref_prob) + ")");

    const NoiseSchedule& sched = bundle.schedule;
    NoiseSchedule attack_sched = sched;
    if (cfg.ddim_steps != sched.ddim_steps)
        attack_sched = make_schedule(sched.T, sched.beta_start, sched.beta_end, cfg.ddim_steps);

    auto t0 = std::chrono::steady_clock::now();

    TextEmbedding h = bundle.text.encode(prompt);
    Image p_init = init_image_prompt(reference, cfg.lambda_blend, derive_seed(cfg.seed, kInitStream));
    Latent z_adv = bundle.codec.encode(p_init);
    Latent z_ref = bundle.codec.encode(reference);
    Latent v;  // momentum persists across timesteps

    AttackResult res;
    res.prompt = prompt;
    res.seed = cfg.seed;
    res.method = "recall";

    const int K = attack_sched.ddim_steps;
    const std::uint64_t gen_seed = derive_seed(cfg.seed, kGenStream);
    ConditionalDenoiser::Cache cache;
    bool have_final = false;

    auto check_generation = [&](int steps_used) {
        res.adversarial_image = bundle.codec.decode(z_adv);
        GenerationRequest req;
        req.prompt = prompt;
        req.image_prompt = res.adversarial_image;
        req.guidance_scale = cfg.guidance_scale;
        req.seed = gen_seed;
        res.final_image = generate(bundle, req);
        auto [prob, hit] = detect(det, res.final_image, target);
        res.detector_prob = prob;
        res.alignment = alignment_of(det, res.final_image, target);
        res.steps_used = steps_used;
        have_final = true;
        return hit;
    };

    for (int step_idx = 0; step_idx < K; ++step_idx) {
        int t = attack_sched.ddim_timesteps[step_idx];
        int countdown = K - step_idx;  // runs K..1 over the loop

        if (cfg.n_inner > 0) {
            Rng eps_rng(derive_seed(cfg.seed, kEpsStream, static_cast<std::uint64_t>(step_idx)));
            Latent eps_t = randn_latent(eps_rng);  // shared by both branches
            Latent z_ref_t = add_noise(sched, z_ref, t, eps_t);
            Latent eps_ref = predict_noise(bundle.denoiser, z_ref_t, t, h, nullptr);
            double sqrt_ab = std::sqrt(sched.alpha_bar_at(t));

            Latent grad;
            auto compute_gradient = [&]() {
                Latent z_adv_t = add_noise(sched, z_adv, t, eps_t);
                Latent eps_adv = bundle.denoiser.forward_cached(z_adv_t, t, h, nullptr, cache);
                double loss = adversarial_loss(eps_ref, eps_adv);
                if (!std::isfinite(loss))
                    throw NumericsError("recall_attack: non-finite adversarial loss at t=" +
                                        std::to_string(t));
                res.loss_history.push_back(loss);
                Tensor deps(kLatentChannels, kLatentSize, kLatentSize);
                int n = deps.size();
                for (int i = 0; i < n; ++i)
                    deps.v[i] = 2.0 * (eps_adv.val.v[i] - eps_ref.val.v[i]) / n;
                Latent dz_t;
                bundle.denoiser.backward(cache, deps, nullptr, &dz_t, nullptr);
                // Chain rule through z_adv_t = sqrt(ab) * z_adv + ...
                scale(dz_t.val, sqrt_ab);
                grad = std::move(dz_t);
            };

            if (cfg.refresh_gradient_each_inner) {
                for (int i = 0; i < cfg.n_inner; ++i) {
                    compute_gradient();
                    v = momentum_update(v, grad, cfg.beta_momentum, cfg.omega);
                    z_adv = pgd_step(z_adv, v, cfg.eta_step, cfg.update_sign);
                }
            } else {
                compute_gradient();
                for (int i = 0; i < cfg.n_inner; ++i) {
                    v = momentum_update(v, grad, cfg.beta_momentum, cfg.omega);
                    z_adv = pgd_step(z_adv, v, cfg.eta_step, cfg.update_sign);
                }
            }
        }

        if (countdown % cfg.epoch_interval == 0)
            z_adv = integrate_reference(z_adv, z_ref, cfg.gamma_integrate);

        if ((step_idx + 1) % cfg.early_stop_every == 0) {
            if (check_generation(step_idx + 1)) {
                res.success = true;
                res.wall_time_s =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                return res;
            }
            have_final = (step_idx == K - 1);
        }
    }

    if (!have_final) check_generation(K);
    res.success = false;
    res.steps_used = K;
    res.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

AttackResult run_baseline(BaselineKind kind, const ModelBundle& bundle, const TextPrompt& prompt,
                          const Image& reference, std::uint64_t seed, const Detector& det,
                          double guidance) {
    ShapeClass target = require_prompt_shape(prompt, "run_baseline");
    auto t0 = std::chrono::steady_clock::now();

    AttackResult res;
    res.prompt = prompt;
    res.seed = seed;
    res.method = baseline_name(kind);
    res.steps_used = 0;

    switch (kind) {
        case BaselineKind::text_only: {
            GenerationRequest req;
            req.prompt = prompt;
            req.guidance_scale = guidance;
            req.seed = seed;
            res.final_image = generate(bundle, req);
            break;
        }
        case BaselineKind::image_only: {
            // Image conditioning with a zero text embedding; the prompt is
            // recorded but plays no role in generation.
            Latent z_cond = bundle.codec.encode(reference);
            auto safety = safety_for(bundle);
            res.adversarial_image = reference;
            res.final_image =
                generate_with_embedding(bundle, null_text_embedding(), &z_cond, guidance, 0.0,
                                        nullptr, seed, safety ? &*safety : nullptr);
            break;
        }
        case BaselineKind::text_noise: {
            Image noise = init_image_prompt(reference, 0.0, derive_seed(seed, kNoiseStream));
            res.adversarial_image = noise;
            GenerationRequest req;
            req.prompt = prompt;
            req.image_prompt = noise;
            req.guidance_scale = guidance;
            req.seed = seed;
            res.final_image = generate(bundle, req);
            break;
        }
        case BaselineKind::text_image: {
            res.adversarial_image = reference;
            GenerationRequest req;
            req.prompt = prompt;
            req.image_prompt = reference;
            req.guidance_scale = guidance;
            req.seed = seed;
            res.final_image = generate(bundle, req);
            break;
        }
    }

    auto [prob, hit] = detect(det, res.final_image, target);
    res.detector_prob = prob;
    res.success = hit;
    res.alignment = alignment_of(det, res.final_image, target);
    res.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace recall
