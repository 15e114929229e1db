#pragma once

#include <cstdint>

#include "recall/nn.hpp"
#include "recall/synthworld.hpp"

namespace recall {

inline constexpr int kTextEmbedDim = 64;
inline constexpr int kPromptTokens = 3;

struct TextEmbedding {
    Vec v = Vec(kTextEmbedDim, 0.0);
};

// Token embeddings (32 each) for the three prompt positions, concatenated and
// pushed through a two-layer MLP. Trained once per world with shape/color
// classification heads so embeddings carry both attributes; the heads stay in
// the parameter block but nothing downstream reads them.
struct TextEncoder {
    Vec w;
    std::size_t emb_off = 0;
    int emb_dim = 32;
    Linear l1, l2;            // 96 -> 64 -> 64, SiLU between
    Linear head_shape;        // 64 -> 5 (four shapes + background)
    Linear head_color;        // 64 -> 4 (three colors + plain)

    static TextEncoder create(std::uint64_t seed);

    // Requires exactly three known tokens; throws ConfigError otherwise.
    TextEmbedding encode(const TextPrompt& prompt) const;
};

struct TextEncoderTrainConfig {
    int steps = 3000;
    double lr = 1e-2;
    std::uint64_t seed = 0;
};

TextEncoder train_text_encoder(const TextEncoderTrainConfig& cfg);

// Zero embedding used for the unconditional branch of guidance.
TextEmbedding null_text_embedding();

}  // namespace recall
