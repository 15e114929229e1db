#include "recall/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recall/errors.hpp"

namespace recall {

namespace {

constexpr int kEmbDim = kDenoiserWidth;
constexpr int kPoolDim = kLatentChannels * (kLatentSize / 2) * (kLatentSize / 2);

void add_channel_bias(Tensor& x, const Vec& emb) {
    for (int c = 0; c < x.c; ++c) {
        double b = emb[c];
        double* row = &x.at(c, 0, 0);
        for (int i = 0; i < x.h * x.w; ++i) row[i] += b;
    }
}

}  // namespace

ConditionalDenoiser ConditionalDenoiser::create(std::uint64_t seed, int T) {
    ConditionalDenoiser d;
    d.T = T;
    ParamAlloc a;
    d.conv_in = Conv2d::make(a, kLatentChannels, kDenoiserWidth, 3, 1, 1);
    for (auto& b : d.blocks) {
        b.c1 = Conv2d::make(a, kDenoiserWidth, kDenoiserWidth, 3, 1, 1);
        b.c2 = Conv2d::make(a, kDenoiserWidth, kDenoiserWidth, 3, 1, 1);
    }
    d.conv_out = Conv2d::make(a, kDenoiserWidth, kLatentChannels, 3, 1, 1);
    d.temb1 = Linear::make(a, kEmbDim, kEmbDim);
    d.temb2 = Linear::make(a, kEmbDim, kEmbDim);
    d.txt_proj = Linear::make(a, kTextEmbedDim, kEmbDim, false);
    d.cond_proj = Linear::make(a, kPoolDim, kEmbDim, false);
    d.w.assign(a.total, 0.0);

    Rng rng(derive_seed(seed, 0xd37a));
    d.conv_in.init_kaiming(d.w.data(), rng);
    for (auto& b : d.blocks) {
        b.c1.init_kaiming(d.w.data(), rng);
        b.c2.init_zero(d.w.data());  // blocks start as identity
    }
    d.conv_out.init_zero(d.w.data());
    d.temb1.init_kaiming(d.w.data(), rng);
    d.temb2.init_kaiming(d.w.data(), rng);
    d.txt_proj.init_zero(d.w.data());
    d.cond_proj.init_zero(d.w.data());

    NoiseSchedule s = make_schedule(T, 1e-4, 2e-2, 1);
    d.skip_a.resize(T);
    d.skip_b.resize(T);
    for (int t = 0; t < T; ++t) {
        d.skip_a[t] = std::sqrt(s.alpha_bar[t]);
        d.skip_b[t] = std::sqrt(1.0 - s.alpha_bar[t]);
    }
    return d;
}

Latent ConditionalDenoiser::forward_cached(const Latent& z_t, int t, const TextEmbedding& h,
                                           const Latent* z_cond, Cache& cache) const {
    if (t < 0 || t >= T) throw ConfigError("denoiser: t out of range");
    if (static_cast<int>(h.v.size()) != kTextEmbedDim)
        throw ConfigError("denoiser: bad text embedding size");
    const double* wp = w.data();

    cache.t = t;
    cache.temb_in = sinusoidal_embedding(t, kEmbDim);
    cache.temb1_pre.resize(kEmbDim);
    temb1.forward(wp, cache.temb_in.data(), cache.temb1_pre.data());
    cache.temb1_act.resize(kEmbDim);
    silu_forward_vec(cache.temb1_pre.data(), cache.temb1_act.data(), kEmbDim);
    cache.emb_time.resize(kEmbDim);
    temb2.forward(wp, cache.temb1_act.data(), cache.emb_time.data());

    cache.h_in = h.v;
    cache.emb = cache.emb_time;
    Vec txt_out(kEmbDim);
    txt_proj.forward(wp, cache.h_in.data(), txt_out.data());
    for (int i = 0; i < kEmbDim; ++i) cache.emb[i] += txt_out[i];

    cache.has_cond = z_cond != nullptr;
    if (z_cond) {
        if (z_cond->val.c != kLatentChannels || z_cond->val.h != kLatentSize ||
            z_cond->val.w != kLatentSize)
            throw ConfigError("denoiser: bad conditioning latent shape");
        Tensor pooled = avgpool2_forward(z_cond->val);
        cache.cond_in = pooled.v;
        Vec cond_out(kEmbDim);
        cond_proj.forward(wp, cache.cond_in.data(), cond_out.data());
        for (int i = 0; i < kEmbDim; ++i) cache.emb[i] += cond_out[i];
    } else {
        cache.cond_in.clear();
    }

    cache.x_in = z_t.val;
    cache.conv_in_out = conv_in.forward(wp, cache.x_in);

    const Tensor* cur = &cache.conv_in_out;
    for (int b = 0; b < kDenoiserBlocks; ++b) {
        auto& bc = cache.blk[b];
        bc.in = *cur;
        bc.act1 = silu_forward(bc.in);
        bc.c1_out_plus_emb = blocks[b].c1.forward(wp, bc.act1);
        add_channel_bias(bc.c1_out_plus_emb, cache.emb);
        bc.act2 = silu_forward(bc.c1_out_plus_emb);
        bc.c2_out = blocks[b].c2.forward(wp, bc.act2);
        bc.out = add(bc.in, bc.c2_out);
        cur = &bc.out;
    }

    cache.act_final = silu_forward(*cur);
    Tensor f = conv_out.forward(wp, cache.act_final);
    double a_t = skip_a[t], b_t = skip_b[t];
    cache.eps = Tensor(kLatentChannels, kLatentSize, kLatentSize);
    for (int i = 0; i < cache.eps.size(); ++i)
        cache.eps.v[i] = b_t * cache.x_in.v[i] - a_t * f.v[i];
    Latent out;
    out.val = cache.eps;
    return out;
}

void ConditionalDenoiser::backward(const Cache& cache, const Tensor& deps, Vec* param_grad,
                                   Latent* dz_t, Latent* dz_cond) const {
    const double* wp = w.data();
    double* g = param_grad ? param_grad->data() : nullptr;
    double a_t = skip_a[cache.t], b_t = skip_b[cache.t];

    Tensor df(deps.c, deps.h, deps.w);
    for (int i = 0; i < df.size(); ++i) df.v[i] = -a_t * deps.v[i];
    Tensor d_act_final = conv_out.backward(wp, cache.act_final, df, g, true);
    Tensor d_cur = silu_backward(cache.blk[kDenoiserBlocks - 1].out, d_act_final);

    Vec d_emb(kEmbDim, 0.0);
    for (int b = kDenoiserBlocks - 1; b >= 0; --b) {
        const auto& bc = cache.blk[b];
        Tensor d_act2 = blocks[b].c2.backward(wp, bc.act2, d_cur, g, true);
        Tensor d_c1pe = silu_backward(bc.c1_out_plus_emb, d_act2);
        for (int c = 0; c < kDenoiserWidth; ++c) {
            const double* row = &d_c1pe.at(c, 0, 0);
            double acc = 0.0;
            for (int i = 0; i < d_c1pe.h * d_c1pe.w; ++i) acc += row[i];
            d_emb[c] += acc;
        }
        Tensor d_act1 = blocks[b].c1.backward(wp, bc.act1, d_c1pe, g, true);
        Tensor d_in = silu_backward(bc.in, d_act1);
        // Residual skip: gradient flows both through the block and around it.
        for (int i = 0; i < d_in.size(); ++i) d_in.v[i] += d_cur.v[i];
        d_cur = std::move(d_in);
    }

    bool need_input = dz_t != nullptr;
    Tensor d_x = conv_in.backward(wp, cache.x_in, d_cur, g, need_input);
    if (dz_t) {
        dz_t->val = std::move(d_x);
        // Direct skip from the eps conversion.
        for (int i = 0; i < dz_t->val.size(); ++i) dz_t->val.v[i] += b_t * deps.v[i];
    }

    // Embedding path.
    if (g) txt_proj.backward(wp, cache.h_in.data(), d_emb.data(), g, nullptr);
    if (cache.has_cond && (g || dz_cond)) {
        Vec d_cond_in(kPoolDim, 0.0);
        cond_proj.backward(wp, cache.cond_in.data(), d_emb.data(), g,
                           dz_cond ? d_cond_in.data() : nullptr);
        if (dz_cond) {
            Tensor pooled_grad(kLatentChannels, kLatentSize / 2, kLatentSize / 2);
            pooled_grad.v = d_cond_in;
            dz_cond->val = avgpool2_backward(pooled_grad, kLatentSize, kLatentSize);
        }
    } else if (dz_cond) {
        dz_cond->val = Tensor(kLatentChannels, kLatentSize, kLatentSize);
    }
    if (g) {
        Vec d_t1a(kEmbDim), d_t1(kEmbDim);
        temb2.backward(wp, cache.temb1_act.data(), d_emb.data(), g, d_t1a.data());
        silu_backward_vec(cache.temb1_pre.data(), d_t1a.data(), d_t1.data(), kEmbDim);
        temb1.backward(wp, cache.temb_in.data(), d_t1.data(), g, nullptr);
    }
}

Latent predict_noise(const ConditionalDenoiser& d, const Latent& z_t, int t,
                     const TextEmbedding& h, const Latent* z_cond) {
    ConditionalDenoiser::Cache cache;
    return d.forward_cached(z_t, t, h, z_cond, cache);
}

DenoiserTrainResult train_denoiser(const ImageCodec& codec, const TextEncoder& text,
                                   const NoiseSchedule& sched,
                                   const std::vector<DatasetItem>& items,
                                   const DenoiserTrainConfig& cfg) {
    if (items.empty()) throw ConfigError("train_denoiser: empty dataset");
    if (!(cfg.cond_dropout >= 0.0 && cfg.cond_dropout <= 1.0))
        throw ConfigError("train_denoiser: cond_dropout outside [0,1]");
    if (cfg.epochs < 0 || cfg.batch < 1) throw ConfigError("train_denoiser: bad epochs/batch");

    // Precompute latents and text embeddings once.
    std::vector<Latent> lat(items.size());
    std::vector<TextEmbedding> emb(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        lat[i] = codec.encode(items[i].image);
        emb[i] = text.encode(items[i].prompt);
    }

    int n_val = std::max(1, static_cast<int>(items.size() * cfg.val_fraction));
    int n_train = static_cast<int>(items.size()) - n_val;
    if (n_train < 1) throw ConfigError("train_denoiser: dataset too small for split");

    // Frozen validation tuples so the loss is comparable across evaluations.
    struct ValCase {
        int idx, t;
        Latent eps;
        bool uncond, has_img;
        Latent img_cond;
    };
    Rng val_rng(derive_seed(cfg.seed, 0x7a1));
    std::vector<ValCase> val_cases;
    for (int i = 0; i < n_val; ++i) {
        ValCase vc;
        vc.idx = n_train + i;
        vc.t = val_rng.uniform_int(0, sched.T - 1);
        vc.eps = randn_latent(val_rng);
        vc.uncond = val_rng.uniform() < cfg.cond_dropout;
        vc.has_img = !vc.uncond && val_rng.uniform() < cfg.img_cond_use_prob;
        if (vc.has_img) {
            vc.img_cond = lat[vc.idx];
            Latent nz = randn_latent(val_rng);
            axpy(cfg.img_cond_noise, nz.val, vc.img_cond.val);
        }
        val_cases.push_back(std::move(vc));
    }

    ConditionalDenoiser model = ConditionalDenoiser::create(cfg.seed, sched.T);
    ConditionalDenoiser::Cache cache;

    // Loss lives in velocity space: ||eps_hat - eps||^2 / alpha_bar_t, which
    // equals the squared error of the network's residual F against its target
    // and weighs every timestep equally. An untrained model scores about 1.
    auto val_loss = [&]() {
        double total = 0.0;
        for (const auto& vc : val_cases) {
            Latent z_t = add_noise(sched, lat[vc.idx], vc.t, vc.eps);
            TextEmbedding h = vc.uncond ? null_text_embedding() : emb[vc.idx];
            Latent pred = model.forward_cached(z_t, vc.t, h, vc.has_img ? &vc.img_cond : nullptr,
                                               cache);
            Tensor diff = sub(pred.val, vc.eps.val);
            total += sum_sq(diff) / (diff.size() * sched.alpha_bar_at(vc.t));
        }
        return total / val_cases.size();
    };

    DenoiserTrainResult result;
    result.val_loss_initial = val_loss();

    Vec g(model.w.size(), 0.0);
    Adam opt(model.w.size(), cfg.lr);
    Rng rng(derive_seed(cfg.seed, 0x7a19));
    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
        for (int start = 0; start < n_train; start += cfg.batch) {
            int end = std::min(n_train, start + cfg.batch);
            for (int j = start; j < end; ++j) {
                int idx = order[j];
                int t = rng.uniform_int(0, sched.T - 1);
                Latent eps = randn_latent(rng);
                Latent z_t = add_noise(sched, lat[idx], t, eps);

                bool uncond = rng.uniform() < cfg.cond_dropout;
                TextEmbedding h = uncond ? null_text_embedding() : emb[idx];
                Latent img_cond;
                bool has_img = !uncond && rng.uniform() < cfg.img_cond_use_prob;
                if (has_img) {
                    img_cond = lat[idx];
                    Latent nz = randn_latent(rng);
                    axpy(cfg.img_cond_noise, nz.val, img_cond.val);
                }

                Latent pred = model.forward_cached(z_t, t, h, has_img ? &img_cond : nullptr,
                                                   cache);
                double w_t = 1.0 / sched.alpha_bar_at(t);
                Tensor deps(kLatentChannels, kLatentSize, kLatentSize);
                int n = deps.size();
                for (int k = 0; k < n; ++k)
                    deps.v[k] = w_t * 2.0 * (pred.val.v[k] - eps.val.v[k]) / n;
                model.backward(cache, deps, &g, nullptr, nullptr);
            }
            double inv = 1.0 / static_cast<double>(end - start);
            for (double& x : g) x *= inv;
            opt.step(model.w, g);
        }
    }

    result.val_loss_final = val_loss();
    result.model = std::move(model);
    return result;
}

}  // namespace recall
