#include "recall/text_encoder.hpp"

#include <array>

#include "recall/errors.hpp"

namespace recall {

namespace {

constexpr int kConcatDim = kPromptTokens * 32;

struct PromptExample {
    TextPrompt prompt;
    int shape_label;  // 0..3 shapes, 4 = background
    int color_label;  // 0..2 colors, 3 = plain
};

std::vector<PromptExample> training_prompts() {
    std::vector<PromptExample> out;
    for (int s = 0; s < kNumShapeClasses; ++s)
        for (int c = 0; c < kNumColors; ++c)
            out.push_back({make_prompt(static_cast<ShapeClass>(s), static_cast<ColorName>(c)), s, c});
    out.push_back({background_prompt(), kNumShapeClasses, kNumColors});
    return out;
}

}  // namespace

TextEncoder TextEncoder::create(std::uint64_t seed) {
    TextEncoder t;
    ParamAlloc a;
    t.emb_off = a.take(static_cast<std::size_t>(vocab().size()) * t.emb_dim);
    t.l1 = Linear::make(a, kConcatDim, kTextEmbedDim);
    t.l2 = Linear::make(a, kTextEmbedDim, kTextEmbedDim);
    t.head_shape = Linear::make(a, kTextEmbedDim, kNumShapeClasses + 1);
    t.head_color = Linear::make(a, kTextEmbedDim, kNumColors + 1);
    t.w.assign(a.total, 0.0);
    Rng rng(derive_seed(seed, 0x7e47));
    for (std::size_t i = 0; i < static_cast<std::size_t>(vocab().size()) * t.emb_dim; ++i)
        t.w[t.emb_off + i] = rng.normal() * 0.3;
    t.l1.init_kaiming(t.w.data(), rng);
    t.l2.init_kaiming(t.w.data(), rng);
    t.head_shape.init_kaiming(t.w.data(), rng);
    t.head_color.init_kaiming(t.w.data(), rng);
    return t;
}

TextEmbedding TextEncoder::encode(const TextPrompt& prompt) const {
    if (prompt.tokens.empty()) throw ConfigError("TextEncoder::encode: empty prompt");
    if (static_cast<int>(prompt.tokens.size()) != kPromptTokens)
        throw ConfigError("TextEncoder::encode: prompts must have exactly 3 tokens");
    Vec concat(kConcatDim);
    for (int p = 0; p < kPromptTokens; ++p) {
        int id = prompt.tokens[p];
        if (id < 0 || id >= static_cast<int>(vocab().size()))
            throw ConfigError("TextEncoder::encode: token id out of range");
        const double* row = &w[emb_off + static_cast<std::size_t>(id) * emb_dim];
        for (int i = 0; i < emb_dim; ++i) concat[p * emb_dim + i] = row[i];
    }
    Vec h1(kTextEmbedDim), h1a(kTextEmbedDim);
    l1.forward(w.data(), concat.data(), h1.data());
    silu_forward_vec(h1.data(), h1a.data(), kTextEmbedDim);
    TextEmbedding out;
    l2.forward(w.data(), h1a.data(), out.v.data());
    return out;
}

TextEncoder train_text_encoder(const TextEncoderTrainConfig& cfg) {
    TextEncoder enc = TextEncoder::create(cfg.seed);
    auto examples = training_prompts();
    Vec g(enc.w.size(), 0.0);
    Adam opt(enc.w.size(), cfg.lr);
    Rng rng(derive_seed(cfg.seed, 0x7e48));

    Vec concat(kConcatDim), h1(kTextEmbedDim), h1a(kTextEmbedDim), h2(kTextEmbedDim);
    Vec shape_logits(kNumShapeClasses + 1), color_logits(kNumColors + 1);
    Vec dshape, dcolor, dh2(kTextEmbedDim), dh2_tmp(kTextEmbedDim);
    Vec dh1a(kTextEmbedDim), dh1(kTextEmbedDim), dconcat(kConcatDim);

    for (int step = 0; step < cfg.steps; ++step) {
        const PromptExample& ex = examples[rng.uniform_int(0, static_cast<int>(examples.size()) - 1)];
        const double* w = enc.w.data();
        for (int p = 0; p < kPromptTokens; ++p) {
            const double* row = &w[enc.emb_off + static_cast<std::size_t>(ex.prompt.tokens[p]) * enc.emb_dim];
            for (int i = 0; i < enc.emb_dim; ++i) concat[p * enc.emb_dim + i] = row[i];
        }
        enc.l1.forward(w, concat.data(), h1.data());
        silu_forward_vec(h1.data(), h1a.data(), kTextEmbedDim);
        enc.l2.forward(w, h1a.data(), h2.data());
        enc.head_shape.forward(w, h2.data(), shape_logits.data());
        enc.head_color.forward(w, h2.data(), color_logits.data());

        softmax_cross_entropy(shape_logits, ex.shape_label, &dshape);
        softmax_cross_entropy(color_logits, ex.color_label, &dcolor);

        enc.head_shape.backward(w, h2.data(), dshape.data(), g.data(), dh2.data());
        enc.head_color.backward(w, h2.data(), dcolor.data(), g.data(), dh2_tmp.data());
        for (int i = 0; i < kTextEmbedDim; ++i) dh2[i] += dh2_tmp[i];
        enc.l2.backward(w, h1a.data(), dh2.data(), g.data(), dh1a.data());
        silu_backward_vec(h1.data(), dh1a.data(), dh1.data(), kTextEmbedDim);
        enc.l1.backward(w, concat.data(), dh1.data(), g.data(), dconcat.data());
        for (int p = 0; p < kPromptTokens; ++p) {
            std::size_t row = enc.emb_off + static_cast<std::size_t>(ex.prompt.tokens[p]) * enc.emb_dim;
            for (int i = 0; i < enc.emb_dim; ++i) g[row + i] += dconcat[p * enc.emb_dim + i];
        }
        opt.step(enc.w, g);
    }
    return enc;
}

TextEmbedding null_text_embedding() { return TextEmbedding{}; }

}  // namespace recall
