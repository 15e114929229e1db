#pragma once

#include <optional>
#include <string>

#include "recall/codec.hpp"
#include "recall/denoiser.hpp"
#include "recall/schedule.hpp"
#include "recall/synthworld.hpp"
#include "recall/text_encoder.hpp"

namespace recall {

enum class BundleKind { base = 0, unlearned = 1 };
enum class UnlearnMethod { none = 0, esd_finetune = 1, sld_guidance = 2 };

const char* bundle_kind_name(BundleKind k);
const char* unlearn_method_name(UnlearnMethod m);
BundleKind parse_bundle_kind(const std::string& s);
UnlearnMethod parse_unlearn_method(const std::string& s);

struct BundleMeta {
    BundleKind kind = BundleKind::base;
    UnlearnMethod method = UnlearnMethod::none;
    std::optional<ShapeClass> erased_concept;
    std::uint64_t train_seed = 0;
    int epochs = 0;
    // Gate results recorded by the unlearning stage; the attack stage refuses
    // to run against an unlearned bundle that has not logged them.
    std::optional<double> forgetting_rate;
    std::optional<double> preservation_score;
    std::optional<double> base_preservation_score;
    std::optional<bool> preservation_pass;
    double sld_safety_scale = 0.0;
};

// Everything needed to generate: codec, text encoder, denoiser, schedule.
struct ModelBundle {
    ImageCodec codec;
    TextEncoder text;
    ConditionalDenoiser denoiser;
    NoiseSchedule schedule;
    BundleMeta meta;
};

// Writes codec.bin / text_encoder.bin / denoiser.bin plus manifest.json with
// per-component sha256 content hashes. load_bundle re-hashes and throws
// ConfigError on mismatch or missing files.
void save_bundle(const std::string& dir, const ModelBundle& bundle);
ModelBundle load_bundle(const std::string& dir);

}  // namespace recall
