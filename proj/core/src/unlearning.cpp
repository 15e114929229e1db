#include "recall/unlearning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recall/errors.hpp"
#include "recall/sampler.hpp"

namespace recall {

ModelBundle unlearn_esd(const ModelBundle& base, const UnlearnConfig& cfg) {
    if (base.meta.kind != BundleKind::base)
        throw ConfigError("unlearn_esd: expected a base bundle");
    if (cfg.finetune_epochs < 0 || cfg.finetune_samples < 1)
        throw ConfigError("unlearn_esd: bad finetune settings");

    ModelBundle out = base;
    out.meta.kind = BundleKind::unlearned;
    out.meta.method = UnlearnMethod::esd_finetune;
    out.meta.erased_concept = cfg.erased;
    out.meta.epochs = cfg.finetune_epochs;
    out.meta.sld_safety_scale = 0.0;

    // States to denoise: latents of freshly rendered concept scenes.
    std::map<ShapeClass, double> mix{{cfg.erased, 1.0}};
    auto items = sample_dataset(cfg.finetune_samples, mix, derive_seed(cfg.seed, 0xe5d0));
    std::vector<Latent> lat(items.size());
    std::vector<TextEmbedding> emb(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        lat[i] = base.codec.encode(items[i].image);
        emb[i] = base.text.encode(items[i].prompt);
    }

    // Only the text projection trains; everything else keeps zero gradient.
    const std::size_t txt_lo = out.denoiser.txt_proj.w_off;
    const std::size_t txt_hi = txt_lo + out.denoiser.txt_proj.param_count();

    Vec g(out.denoiser.w.size(), 0.0);
    Adam opt(out.denoiser.w.size(), cfg.lr);
    Rng rng(derive_seed(cfg.seed, 0xe5d1));
    ConditionalDenoiser::Cache cache;
    std::vector<int> order(items.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
        for (int idx : order) {
            int t = rng.uniform_int(0, base.schedule.T - 1);
            Latent eps = randn_latent(rng);
            Latent z_t = add_noise(base.schedule, lat[idx], t, eps);

            // Frozen-base targets.
            Latent eps_u = predict_noise(base.denoiser, z_t, t, null_text_embedding(), nullptr);
            Latent eps_c = predict_noise(base.denoiser, z_t, t, emb[idx], nullptr);
            Latent target;
            for (int k = 0; k < target.val.size(); ++k)
                target.val.v[k] = eps_u.val.v[k] -
                                  cfg.negative_guidance * (eps_c.val.v[k] - eps_u.val.v[k]);

            Latent pred = out.denoiser.forward_cached(z_t, t, emb[idx], nullptr, cache);
            Tensor deps(kLatentChannels, kLatentSize, kLatentSize);
            int n = deps.size();
            for (int k = 0; k < n; ++k)
                deps.v[k] = 2.0 * (pred.val.v[k] - target.val.v[k]) / n;
            out.denoiser.backward(cache, deps, &g, nullptr, nullptr);

            for (std::size_t k = 0; k < g.size(); ++k)
                if (k < txt_lo || k >= txt_hi) g[k] = 0.0;
            opt.step(out.denoiser.w, g);
        }
    }
    return out;
}

ModelBundle unlearn_sld(const ModelBundle& base, const UnlearnConfig& cfg) {
    if (base.meta.kind != BundleKind::base)
        throw ConfigError("unlearn_sld: expected a base bundle");
    ModelBundle out = base;
    out.meta.kind = BundleKind::unlearned;
    out.meta.method = UnlearnMethod::sld_guidance;
    out.meta.erased_concept = cfg.erased;
    out.meta.epochs = 0;
    out.meta.sld_safety_scale = cfg.sld_safety_scale;
    return out;
}

ModelBundle run_unlearn(const ModelBundle& base, const UnlearnConfig& cfg) {
    switch (cfg.method) {
        case UnlearnMethod::esd_finetune: return unlearn_esd(base, cfg);
        case UnlearnMethod::sld_guidance: return unlearn_sld(base, cfg);
        case UnlearnMethod::none: break;
    }
    throw ConfigError("run_unlearn: method must be esd_finetune or sld_guidance");
}

double evaluate_forgetting(const ModelBundle& bundle, const std::vector<TextPrompt>& prompts,
                           const Detector& det, const std::vector<std::uint64_t>& seeds,
                           double guidance) {
    if (prompts.empty()) throw ConfigError("evaluate_forgetting: no prompts");
    if (seeds.empty()) throw ConfigError("evaluate_forgetting: no seeds");
    int hits = 0, total = 0;
    for (const auto& prompt : prompts) {
        auto target = prompt_shape(prompt);
        if (!target) throw ConfigError("evaluate_forgetting: prompt names no shape");
        for (std::uint64_t seed : seeds) {
            GenerationRequest req;
            req.prompt = prompt;
            req.guidance_scale = guidance;
            req.seed = seed;
            Image img = generate(bundle, req);
            if (detect(det, img, *target).second) ++hits;
            ++total;
        }
    }
    return static_cast<double>(hits) / total;
}

PreservationResult evaluate_preservation(const ModelBundle& bundle, const ModelBundle& base,
                                         const std::vector<TextPrompt>& prompts,
                                         const Detector& det,
                                         const std::vector<std::uint64_t>& seeds,
                                         double sigma, double guidance) {
    if (prompts.empty()) throw ConfigError("evaluate_preservation: no prompts");
    if (seeds.empty()) throw ConfigError("evaluate_preservation: no seeds");
    PreservationResult r;
    int hits = 0, base_hits = 0, total = 0;
    double cos_sum = 0.0;
    for (const auto& prompt : prompts) {
        auto target = prompt_shape(prompt);
        if (!target) throw ConfigError("evaluate_preservation: prompt names no shape");
        for (std::uint64_t seed : seeds) {
            GenerationRequest req;
            req.prompt = prompt;
            req.guidance_scale = guidance;
            req.seed = seed;
            Image img = generate(bundle, req);
            Image ref = generate(base, req);
            if (detect(det, img, *target).second) ++hits;
            if (detect(det, ref, *target).second) ++base_hits;
            cos_sum += cosine_similarity(det.features(img), det.features(ref));
            ++total;
        }
    }
    r.detection_rate = static_cast<double>(hits) / total;
    r.base_detection_rate = static_cast<double>(base_hits) / total;
    r.mean_feature_cosine = cos_sum / total;
    r.pass = (r.detection_rate >= r.base_detection_rate - 0.15) &&
             (r.mean_feature_cosine >= sigma);
    return r;
}

}  // namespace recall
