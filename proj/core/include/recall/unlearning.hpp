#pragma once

#include <vector>

#include "recall/bundle.hpp"
#include "recall/detector.hpp"

namespace recall {

struct UnlearnConfig {
    UnlearnMethod method = UnlearnMethod::esd_finetune;
    ShapeClass erased = ShapeClass::circle;
    double negative_guidance = 1.0;  // strength of the push away from the concept
    int finetune_epochs = 8;
    int finetune_samples = 240;
    double lr = 1e-3;
    double sld_safety_scale = 2.0;
    std::uint64_t seed = 0;
};

// Weight-edit erasure: finetunes only the denoiser's text projection so the
// concept-conditioned noise estimate moves toward
//   eps_uncond - negative_guidance * (eps_cond - eps_uncond)
// computed from the frozen base model. Everything else stays bit-identical.
ModelBundle unlearn_esd(const ModelBundle& base, const UnlearnConfig& cfg);

// Inference-time erasure: copies the base weights untouched and records a
// safety scale that generation applies as guidance away from the concept.
ModelBundle unlearn_sld(const ModelBundle& base, const UnlearnConfig& cfg);

ModelBundle run_unlearn(const ModelBundle& base, const UnlearnConfig& cfg);

// Fraction of text-only generations of the given prompts whose target shape
// the detector still finds. Prompts must all name a shape class.
double evaluate_forgetting(const ModelBundle& bundle, const std::vector<TextPrompt>& prompts,
                           const Detector& det, const std::vector<std::uint64_t>& seeds,
                           double guidance = 7.0);

struct PreservationResult {
    double detection_rate = 0.0;       // non-erased prompts still detected, unlearned bundle
    double base_detection_rate = 0.0;  // same prompts and seeds on the base bundle
    double mean_feature_cosine = 0.0;  // unlearned vs base generation, paired by (prompt, seed)
    bool pass = false;
};

// pass requires detection within 15 points of base and mean cosine >= sigma.
PreservationResult evaluate_preservation(const ModelBundle& bundle, const ModelBundle& base,
                                         const std::vector<TextPrompt>& prompts,
                                         const Detector& det,
                                         const std::vector<std::uint64_t>& seeds,
                                         double sigma = 0.7, double guidance = 7.0);

}  // namespace recall
