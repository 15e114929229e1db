#include <cmath>
#include <doctest.h>
#include <filesystem>
#include <map>

#include "recall/detector.hpp"
#include "recall/errors.hpp"
#include "recall/synthworld.hpp"
#include "test_support.hpp"

using namespace recall;
using namespace recall::testsupport;
namespace fs = std::filesystem;

namespace {

const Detector& trained() { return quick_detector(); }

}  // namespace

TEST_CASE("quick-trained detector classifies held-out renders") {
    double acc = detector_accuracy(trained(), heldout_items());
    CHECK(acc >= 0.9);
}

TEST_CASE("class probabilities form a distribution") {
    const Detector& det = trained();
    for (int i = 0; i < 20; ++i) {
        auto p = det.probs(heldout_items()[i].image);
        double sum = 0.0;
        for (double x : p) {
            CHECK(x >= 0.0);
            CHECK(x <= 1.0);
            sum += x;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("threshold comparison includes the boundary") {
    CHECK(meets_threshold(0.45, 0.45));
    CHECK(meets_threshold(0.46, 0.45));
    CHECK_FALSE(meets_threshold(0.449999, 0.45));
}

TEST_CASE("detect returns the probability of the requested class") {
    const Detector& det = trained();
    const DatasetItem& item = heldout_items()[0];
    auto p = det.probs(item.image);
    for (int cls = 0; cls < kNumShapeClasses; ++cls) {
        auto [prob, hit] = detect(det, item.image, static_cast<ShapeClass>(cls));
        CHECK(prob == p[cls]);
        CHECK(hit == (prob >= det.tau));
    }
    CHECK_THROWS_AS(detect(det, item.image, static_cast<ShapeClass>(7)), ConfigError);
}

TEST_CASE("no confident class on blank backgrounds") {
    const Detector& det = trained();
    for (std::uint64_t s = 0; s < 8; ++s) {
        auto p = det.probs(render_background(1000 + s));
        double mx = *std::max_element(p.begin(), p.end());
        CHECK(mx < 0.9);
    }
}

TEST_CASE("features have the documented width and drive the prototypes") {
    const Detector& det = trained();
    Vec f = det.features(heldout_items()[0].image);
    CHECK(static_cast<int>(f.size()) == kDetectorFeatureDim);
    for (int cls = 0; cls < kNumShapeClasses; ++cls) {
        double norm = 0.0;
        for (double x : det.prototypes[cls]) norm += x * x;
        CHECK(norm > 0.0);
        CHECK(static_cast<int>(det.prototypes[cls].size()) == kDetectorFeatureDim);
    }
}

TEST_CASE("own-class prototype is the closest for most clean renders") {
    const Detector& det = trained();
    int good = 0, total = 0;
    for (const auto& item : heldout_items()) {
        Vec f = det.features(item.image);
        double best = -2.0;
        int best_cls = -1;
        for (int cls = 0; cls < kNumShapeClasses; ++cls) {
            double dot = 0.0, nf = 0.0, np = 0.0;
            for (int i = 0; i < kDetectorFeatureDim; ++i) {
                dot += f[i] * det.prototypes[cls][i];
                nf += f[i] * f[i];
                np += det.prototypes[cls][i] * det.prototypes[cls][i];
            }
            double cos = dot / (std::sqrt(nf) * std::sqrt(np) + 1e-12);
            if (cos > best) {
                best = cos;
                best_cls = cls;
            }
        }
        if (best_cls == static_cast<int>(item.spec.shape)) ++good;
        ++total;
    }
    CHECK(static_cast<double>(good) / total >= 0.95);
}

TEST_CASE("training is deterministic per seed") {
    auto small = sample_dataset(200, testsupport::uniform_mix(), 413);
    DetectorTrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 9;
    Detector a = train_detector(small, cfg);
    Detector b = train_detector(small, cfg);
    CHECK(a.w == b.w);
    for (int cls = 0; cls < kNumShapeClasses; ++cls)
        CHECK(a.prototypes[cls] == b.prototypes[cls]);
}

TEST_CASE("empty dataset is rejected") {
    std::vector<DatasetItem> none;
    DetectorTrainConfig cfg;
    CHECK_THROWS_AS(train_detector(none, cfg), ConfigError);
    CHECK_THROWS_AS(detector_accuracy(trained(), none), ConfigError);
}

TEST_CASE("detector save/load round trip") {
    fs::path dir = fs::temp_directory_path() / "recall_test_detector_rt";
    fs::remove_all(dir);
    const Detector& det = trained();
    save_detector(dir.string(), det);
    Detector r = load_detector(dir.string());
    CHECK(r.w == det.w);
    CHECK(r.tau == det.tau);
    for (int cls = 0; cls < kNumShapeClasses; ++cls)
        CHECK(r.prototypes[cls] == det.prototypes[cls]);
    auto p1 = det.probs(heldout_items()[3].image);
    auto p2 = r.probs(heldout_items()[3].image);
    CHECK(p1 == p2);
    fs::remove_all(dir);
    CHECK_THROWS_AS(load_detector(dir.string()), ConfigError);
}
