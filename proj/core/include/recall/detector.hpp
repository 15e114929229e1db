#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "recall/image.hpp"
#include "recall/nn.hpp"
#include "recall/synthworld.hpp"

namespace recall {

inline constexpr int kDetectorFeatureDim = 64;
inline constexpr double kDetectorTau = 0.45;

// Three conv+pool stages, quadrant average pool, linear projection to a
// 64-d feature, linear head over the four shape classes. The feature vector
// doubles as the perceptual embedding behind alignment and diversity metrics.
struct Detector {
    Vec w;
    Conv2d c1, c2, c3;  // 3->16 @32, 16->32 @16, 32->64 @8, each pool /2
    Linear proj;        // pooled 64x2x2 -> 64
    Linear head;        // 64 -> 4
    double tau = kDetectorTau;
    std::array<Vec, kNumShapeClasses> prototypes;  // mean normalized class features

    static Detector create(std::uint64_t seed);

    Vec features(const Image& img) const;
    std::array<double, kNumShapeClasses> probs(const Image& img) const;
};

// The >= convention at the decision boundary, kept separate so it is directly
// testable.
inline bool meets_threshold(double prob, double tau) { return prob >= tau; }

// Returns {probability of target, probability >= tau}.
std::pair<double, bool> detect(const Detector& det, const Image& img, ShapeClass target);

double detector_accuracy(const Detector& det, const std::vector<DatasetItem>& items);

struct DetectorTrainConfig {
    int epochs = 8;
    int batch = 32;
    double lr = 2e-3;
    double label_smoothing = 0.05;
    double blank_fraction = 0.1;   // extra blank images trained toward uniform
    double noise_aug = 0.04;       // pixel noise amplitude during training
    std::uint64_t seed = 0;
};

Detector train_detector(const std::vector<DatasetItem>& items, const DetectorTrainConfig& cfg);

void save_detector(const std::string& dir, const Detector& det);
Detector load_detector(const std::string& dir);

}  // namespace recall
