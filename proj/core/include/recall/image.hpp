#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recall/tensor.hpp"

namespace recall {

inline constexpr int kImageChannels = 3;
inline constexpr int kImageSize = 32;

// RGB image in [0,1], stored [3,32,32].
struct Image {
    Tensor pix{kImageChannels, kImageSize, kImageSize};
};

// 8-bit quantization used for PNG round trips.
std::vector<std::uint8_t> to_rgb8(const Image& img);
Image from_rgb8(const std::vector<std::uint8_t>& rgb, int w, int h);

// PNG io. The writer emits no ancillary chunks (no timestamps, no text), so
// files are byte-stable across runs.
void write_png(const std::string& path, const Image& img);
void write_png_rgb8(const std::string& path, const std::vector<std::uint8_t>& rgb, int w, int h);
Image read_png(const std::string& path);

}  // namespace recall
