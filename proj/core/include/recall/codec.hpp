#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "recall/image.hpp"
#include "recall/nn.hpp"
#include "recall/schedule.hpp"
#include "recall/synthworld.hpp"

namespace recall {

// Small convolutional autoencoder mapping 3x32x32 images to 4x8x8 latents.
// After training, per-channel latent statistics are folded into encode/decode
// so downstream diffusion sees roughly unit-variance latents.
struct ImageCodec {
    Vec w;
    Conv2d e1, e2, e3;      // 3->16 (s2), 16->32 (s2), 32->4
    Conv2d d1, d2, d3, d4;  // 4->32, up, 32->16, up, 16->8, 8->3 + sigmoid
    std::array<double, kLatentChannels> lat_mean{};
    std::array<double, kLatentChannels> lat_std{};

    static ImageCodec create(std::uint64_t seed);

    Latent encode_raw(const Image& img) const;  // before normalization
    Latent encode(const Image& img) const;
    Image decode(const Latent& z) const;        // output clamped to [0,1]
};

struct CodecTrainConfig {
    int epochs = 6;
    int batch = 32;
    double lr = 2e-3;
    double latent_l2 = 1e-4;
    std::uint64_t seed = 0;
};

ImageCodec train_codec(const std::vector<DatasetItem>& items, const CodecTrainConfig& cfg);

// Mean absolute reconstruction error over the set.
double codec_mae(const ImageCodec& codec, const std::vector<DatasetItem>& items);

}  // namespace recall
