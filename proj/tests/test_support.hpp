#pragma once

#include <map>
#include <vector>

#include "recall/bundle.hpp"
#include "recall/detector.hpp"
#include "recall/rng.hpp"
#include "recall/synthworld.hpp"

namespace recall::testsupport {

inline std::map<ShapeClass, double> uniform_mix() {
    std::map<ShapeClass, double> mix;
    for (int s = 0; s < kNumShapeClasses; ++s) mix[static_cast<ShapeClass>(s)] = 0.25;
    return mix;
}

inline const std::vector<DatasetItem>& train_items() {
    static auto items = sample_dataset(1500, uniform_mix(), 411);
    return items;
}

inline const std::vector<DatasetItem>& heldout_items() {
    static auto items = sample_dataset(400, uniform_mix(), 412);
    return items;
}

// One shared training run keeps the suite fast; tests only read from it.
inline const Detector& quick_detector() {
    static Detector det = [] {
        DetectorTrainConfig cfg;
        cfg.epochs = 6;
        return train_detector(train_items(), cfg);
    }();
    return det;
}

// Random but fixed weights so conditioning and gradient paths are all active,
// unlike a freshly created model whose projections start at zero.
inline ConditionalDenoiser scrambled_denoiser(std::uint64_t seed) {
    ConditionalDenoiser d = ConditionalDenoiser::create(seed);
    Rng rng(derive_seed(seed, 0x5c5c));
    for (double& x : d.w) x = 0.05 * rng.normal();
    return d;
}

inline ModelBundle untrained_bundle() {
    ModelBundle b;
    b.codec = ImageCodec::create(1);
    b.text = TextEncoder::create(2);
    b.denoiser = scrambled_denoiser(3);
    b.schedule = make_schedule();
    return b;
}

}  // namespace recall::testsupport
