#include "recall/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recall/errors.hpp"

namespace recall {

namespace {

struct ForwardCache {
    Tensor x;
    Tensor e1_pre, e1_act, e2_pre, e2_act, z_raw;
    Tensor d1_pre, d1_act, d1_up, d2_pre, d2_act, d2_up, d3_pre, d3_act, d4_pre, recon;
};

void forward_full(const ImageCodec& c, const Image& img, ForwardCache& fc) {
    const double* w = c.w.data();
    fc.x = img.pix;
    fc.e1_pre = c.e1.forward(w, fc.x);
    fc.e1_act = silu_forward(fc.e1_pre);
    fc.e2_pre = c.e2.forward(w, fc.e1_act);
    fc.e2_act = silu_forward(fc.e2_pre);
    fc.z_raw = c.e3.forward(w, fc.e2_act);

    fc.d1_pre = c.d1.forward(w, fc.z_raw);
    fc.d1_act = silu_forward(fc.d1_pre);
    fc.d1_up = upsample2_forward(fc.d1_act);
    fc.d2_pre = c.d2.forward(w, fc.d1_up);
    fc.d2_act = silu_forward(fc.d2_pre);
    fc.d2_up = upsample2_forward(fc.d2_act);
    fc.d3_pre = c.d3.forward(w, fc.d2_up);
    fc.d3_act = silu_forward(fc.d3_pre);
    fc.d4_pre = c.d4.forward(w, fc.d3_act);
    fc.recon = sigmoid_forward(fc.d4_pre);
}

// Reconstruction MSE plus latent_l2 * mean(z_raw^2); accumulates param grads.
double backward_full(const ImageCodec& c, const ForwardCache& fc, double latent_l2, Vec& g) {
    const double* w = c.w.data();
    int n = fc.recon.size();
    double loss = 0.0;
    Tensor drecon(fc.recon.c, fc.recon.h, fc.recon.w);
    for (int i = 0; i < n; ++i) {
        double d = fc.recon.v[i] - fc.x.v[i];
        loss += d * d;
        drecon.v[i] = 2.0 * d / n;
    }
    loss /= n;

    int zn = fc.z_raw.size();
    double zloss = 0.0;
    for (int i = 0; i < zn; ++i) zloss += fc.z_raw.v[i] * fc.z_raw.v[i];
    loss += latent_l2 * zloss / zn;

    Tensor d4_pre_g = sigmoid_backward(fc.recon, drecon);
    Tensor d3_act_g = c.d4.backward(w, fc.d3_act, d4_pre_g, g.data(), true);
    Tensor d3_pre_g = silu_backward(fc.d3_pre, d3_act_g);
    Tensor d2_up_g = c.d3.backward(w, fc.d2_up, d3_pre_g, g.data(), true);
    Tensor d2_act_g = upsample2_backward(d2_up_g);
    Tensor d2_pre_g = silu_backward(fc.d2_pre, d2_act_g);
    Tensor d1_up_g = c.d2.backward(w, fc.d1_up, d2_pre_g, g.data(), true);
    Tensor d1_act_g = upsample2_backward(d1_up_g);
    Tensor d1_pre_g = silu_backward(fc.d1_pre, d1_act_g);
    Tensor z_g = c.d1.backward(w, fc.z_raw, d1_pre_g, g.data(), true);
    for (int i = 0; i < zn; ++i) z_g.v[i] += latent_l2 * 2.0 * fc.z_raw.v[i] / zn;

    Tensor e2_act_g = c.e3.backward(w, fc.e2_act, z_g, g.data(), true);
    Tensor e2_pre_g = silu_backward(fc.e2_pre, e2_act_g);
    Tensor e1_act_g = c.e2.backward(w, fc.e1_act, e2_pre_g, g.data(), true);
    Tensor e1_pre_g = silu_backward(fc.e1_pre, e1_act_g);
    c.e1.backward(w, fc.x, e1_pre_g, g.data(), false);
    return loss;
}

}  // namespace

ImageCodec ImageCodec::create(std::uint64_t seed) {
    ImageCodec c;
    ParamAlloc a;
    c.e1 = Conv2d::make(a, kImageChannels, 16, 3, 2, 1);
    c.e2 = Conv2d::make(a, 16, 32, 3, 2, 1);
    c.e3 = Conv2d::make(a, 32, kLatentChannels, 3, 1, 1);
    c.d1 = Conv2d::make(a, kLatentChannels, 32, 3, 1, 1);
    c.d2 = Conv2d::make(a, 32, 16, 3, 1, 1);
    c.d3 = Conv2d::make(a, 16, 8, 3, 1, 1);
    c.d4 = Conv2d::make(a, 8, kImageChannels, 3, 1, 1);
    c.w.assign(a.total, 0.0);
    Rng rng(derive_seed(seed, 0xc0dec));
    for (const Conv2d* layer : {&c.e1, &c.e2, &c.e3, &c.d1, &c.d2, &c.d3, &c.d4})
        layer->init_kaiming(c.w.data(), rng);
    c.lat_mean.fill(0.0);
    c.lat_std.fill(1.0);
    return c;
}

Latent ImageCodec::encode_raw(const Image& img) const {
    if (img.pix.c != kImageChannels || img.pix.h != kImageSize || img.pix.w != kImageSize)
        throw ConfigError("ImageCodec::encode: expected a 3x32x32 image");
    if (!all_finite(img.pix)) throw NumericsError("ImageCodec::encode: non-finite input");
    const double* w = this->w.data();
    Tensor h1 = silu_forward(e1.forward(w, img.pix));
    Tensor h2 = silu_forward(e2.forward(w, h1));
    Latent z;
    z.val = e3.forward(w, h2);
    return z;
}

Latent ImageCodec::encode(const Image& img) const {
    Latent z = encode_raw(img);
    for (int c = 0; c < kLatentChannels; ++c) {
        double inv = 1.0 / lat_std[c];
        for (int i = 0; i < kLatentSize * kLatentSize; ++i) {
            double& v = z.val.v[static_cast<std::size_t>(c) * kLatentSize * kLatentSize + i];
            v = (v - lat_mean[c]) * inv;
        }
    }
    return z;
}

Image ImageCodec::decode(const Latent& z) const {
    if (z.val.c != kLatentChannels || z.val.h != kLatentSize || z.val.w != kLatentSize)
        throw ConfigError("ImageCodec::decode: expected a 4x8x8 latent");
    if (!all_finite(z.val)) throw NumericsError("ImageCodec::decode: non-finite latent");
    Tensor raw = z.val;
    for (int c = 0; c < kLatentChannels; ++c)
        for (int i = 0; i < kLatentSize * kLatentSize; ++i) {
            double& v = raw.v[static_cast<std::size_t>(c) * kLatentSize * kLatentSize + i];
            v = v * lat_std[c] + lat_mean[c];
        }
    const double* w = this->w.data();
    Tensor h1 = upsample2_forward(silu_forward(d1.forward(w, raw)));
    Tensor h2 = upsample2_forward(silu_forward(d2.forward(w, h1)));
    Tensor h3 = silu_forward(d3.forward(w, h2));
    Image out;
    out.pix = sigmoid_forward(d4.forward(w, h3));
    clamp_(out.pix, 0.0, 1.0);
    return out;
}

ImageCodec train_codec(const std::vector<DatasetItem>& items, const CodecTrainConfig& cfg) {
    if (items.empty()) throw ConfigError("train_codec: empty dataset");
    if (cfg.epochs < 0 || cfg.batch < 1) throw ConfigError("train_codec: bad epochs/batch");

    ImageCodec codec = ImageCodec::create(cfg.seed);
    Vec g(codec.w.size(), 0.0);
    Adam opt(codec.w.size(), cfg.lr);
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5481));

    std::vector<int> order(items.size());
    std::iota(order.begin(), order.end(), 0);

    ForwardCache fc;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int>(i) - 1)]);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            std::size_t end = std::min(order.size(), start + cfg.batch);
            for (std::size_t j = start; j < end; ++j) {
                forward_full(codec, items[order[j]].image, fc);
                backward_full(codec, fc, cfg.latent_l2, g);
            }
            double inv = 1.0 / static_cast<double>(end - start);
            for (double& x : g) x *= inv;
            opt.step(codec.w, g);
        }
    }

    // Fold per-channel latent statistics into encode/decode so latents are
    // roughly unit variance for the diffusion model.
    const int hw = kLatentSize * kLatentSize;
    std::array<double, kLatentChannels> sum{}, sumsq{};
    for (const auto& item : items) {
        Latent z = codec.encode_raw(item.image);
        for (int c = 0; c < kLatentChannels; ++c)
            for (int i = 0; i < hw; ++i) {
                double v = z.val.v[static_cast<std::size_t>(c) * hw + i];
                sum[c] += v;
                sumsq[c] += v * v;
            }
    }
    double count = static_cast<double>(items.size()) * hw;
    for (int c = 0; c < kLatentChannels; ++c) {
        double mu = sum[c] / count;
        double var = std::max(sumsq[c] / count - mu * mu, 1e-12);
        codec.lat_mean[c] = mu;
        codec.lat_std[c] = std::sqrt(var);
    }
    return codec;
}

double codec_mae(const ImageCodec& codec, const std::vector<DatasetItem>& items) {
    if (items.empty()) throw ConfigError("codec_mae: empty dataset");
    double total = 0.0;
    for (const auto& item : items) {
        Image recon = codec.decode(codec.encode(item.image));
        for (int i = 0; i < recon.pix.size(); ++i)
            total += std::abs(recon.pix.v[i] - item.image.pix.v[i]);
    }
    return total / (static_cast<double>(items.size()) * kImageChannels * kImageSize * kImageSize);
}

}  // namespace recall
