#include "recall/detector.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "recall/errors.hpp"
#include "recall/hash.hpp"

namespace recall {

namespace fs = std::filesystem;

namespace {

// Shift raw [0,1] pixels to roughly zero mean, unit variance (dataset pixel
// statistics: mean 0.149, std 0.140).
void standardize(Tensor& x) {
    for (double& v : x.v) v = (v - 0.15) / 0.15;
}

struct FwdCache {
    Tensor x, p1, a1, q1, p2, a2, q2, p3, a3, q3, pool;
    Vec feat;
    Vec logits;
};

void forward_cached(const Detector& d, const Tensor& x, FwdCache& fc) {
    const double* w = d.w.data();
    fc.x = x;
    standardize(fc.x);
    fc.p1 = d.c1.forward(w, fc.x);
    fc.a1 = silu_forward(fc.p1);
    fc.q1 = avgpool2_forward(fc.a1);
    fc.p2 = d.c2.forward(w, fc.q1);
    fc.a2 = silu_forward(fc.p2);
    fc.q2 = avgpool2_forward(fc.a2);
    fc.p3 = d.c3.forward(w, fc.q2);
    fc.a3 = silu_forward(fc.p3);
    fc.q3 = avgpool2_forward(fc.a3);
    fc.pool = avgpool2_forward(fc.q3);
    fc.feat.resize(kDetectorFeatureDim);
    d.proj.forward(w, fc.pool.data(), fc.feat.data());
    fc.logits.resize(kNumShapeClasses);
    d.head.forward(w, fc.feat.data(), fc.logits.data());
}

void backward_cached(const Detector& d, const FwdCache& fc, const Vec& dlogits, Vec& g) {
    const double* w = d.w.data();
    Vec dfeat(kDetectorFeatureDim, 0.0);
    d.head.backward(w, fc.feat.data(), dlogits.data(), g.data(), dfeat.data());
    Tensor dpool(fc.pool.c, fc.pool.h, fc.pool.w);
    d.proj.backward(w, fc.pool.data(), dfeat.data(), g.data(), dpool.data());
    Tensor dq3 = avgpool2_backward(dpool, fc.q3.h, fc.q3.w);
    Tensor da3 = avgpool2_backward(dq3, fc.a3.h, fc.a3.w);
    Tensor dp3 = silu_backward(fc.p3, da3);
    Tensor dq2 = d.c3.backward(w, fc.q2, dp3, g.data(), true);
    Tensor da2 = avgpool2_backward(dq2, fc.a2.h, fc.a2.w);
    Tensor dp2 = silu_backward(fc.p2, da2);
    Tensor dq1 = d.c2.backward(w, fc.q1, dp2, g.data(), true);
    Tensor da1 = avgpool2_backward(dq1, fc.a1.h, fc.a1.w);
    Tensor dp1 = silu_backward(fc.p1, da1);
    d.c1.backward(w, fc.x, dp1, g.data(), false);
}

}  // namespace

Detector Detector::create(std::uint64_t seed) {
    Detector d;
    ParamAlloc a;
    d.c1 = Conv2d::make(a, kImageChannels, 16, 3, 1, 1);
    d.c2 = Conv2d::make(a, 16, 32, 3, 1, 1);
    d.c3 = Conv2d::make(a, 32, 64, 3, 1, 1);
    d.proj = Linear::make(a, 64 * 2 * 2, kDetectorFeatureDim);
    d.head = Linear::make(a, kDetectorFeatureDim, kNumShapeClasses);
    d.w.assign(a.total, 0.0);
    Rng rng(derive_seed(seed, 0xde7ec7));
    d.c1.init_kaiming(d.w.data(), rng);
    d.c2.init_kaiming(d.w.data(), rng);
    d.c3.init_kaiming(d.w.data(), rng);
    d.proj.init_kaiming(d.w.data(), rng);
    d.head.init_kaiming(d.w.data(), rng);
    for (auto& p : d.prototypes) p.assign(kDetectorFeatureDim, 0.0);
    return d;
}

Vec Detector::features(const Image& img) const {
    if (img.pix.c != kImageChannels || img.pix.h != kImageSize || img.pix.w != kImageSize)
        throw ConfigError("Detector: expected a 3x32x32 image");
    const double* wp = w.data();
    Tensor x = img.pix;
    standardize(x);
    Tensor q1 = avgpool2_forward(silu_forward(c1.forward(wp, x)));
    Tensor q2 = avgpool2_forward(silu_forward(c2.forward(wp, q1)));
    Tensor q3 = avgpool2_forward(silu_forward(c3.forward(wp, q2)));
    Tensor pool = avgpool2_forward(q3);
    Vec f(kDetectorFeatureDim);
    proj.forward(wp, pool.data(), f.data());
    return f;
}

std::array<double, kNumShapeClasses> Detector::probs(const Image& img) const {
    Vec f = features(img);
    Vec logits(kNumShapeClasses);
    head.forward(w.data(), f.data(), logits.data());
    Vec p = softmax(logits);
    std::array<double, kNumShapeClasses> out{};
    std::copy(p.begin(), p.end(), out.begin());
    return out;
}

std::pair<double, bool> detect(const Detector& det, const Image& img, ShapeClass target) {
    int ti = static_cast<int>(target);
    if (ti < 0 || ti >= kNumShapeClasses) throw ConfigError("detect: bad target class");
    double p = det.probs(img)[ti];
    return {p, meets_threshold(p, det.tau)};
}

double detector_accuracy(const Detector& det, const std::vector<DatasetItem>& items) {
    if (items.empty()) throw ConfigError("detector_accuracy: empty dataset");
    int correct = 0;
    for (const auto& item : items) {
        auto p = det.probs(item.image);
        int arg = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        if (arg == static_cast<int>(item.spec.shape)) ++correct;
    }
    return static_cast<double>(correct) / items.size();
}

Detector train_detector(const std::vector<DatasetItem>& items, const DetectorTrainConfig& cfg) {
    if (items.empty()) throw ConfigError("train_detector: empty dataset");
    Detector det = Detector::create(cfg.seed);
    Vec g(det.w.size(), 0.0);
    Adam opt(det.w.size(), cfg.lr);
    Rng rng(derive_seed(cfg.seed, 0xde7e));

    std::vector<int> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    FwdCache fc;
    Vec dlogits(kNumShapeClasses);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            std::size_t end = std::min(order.size(), start + cfg.batch);
            for (std::size_t j = start; j < end; ++j) {
                bool blank = rng.uniform() < cfg.blank_fraction;
                Tensor x;
                int label = 0;
                if (blank) {
                    x = render_background(rng.next_u64()).pix;
                } else {
                    const DatasetItem& item = items[order[j]];
                    x = item.image.pix;
                    label = static_cast<int>(item.spec.shape);
                }
                if (cfg.noise_aug > 0.0 && rng.uniform() < 0.5) {
                    double amp = rng.uniform(0.0, cfg.noise_aug);
                    for (double& v : x.v) v += amp * rng.normal();
                }
                forward_cached(det, x, fc);
                if (blank) {
                    // Train blanks toward the uniform distribution so no class
                    // fires confidently on an empty canvas.
                    Vec p = softmax(fc.logits);
                    for (int k = 0; k < kNumShapeClasses; ++k)
                        dlogits[k] = p[k] - 1.0 / kNumShapeClasses;
                } else {
                    softmax_cross_entropy(fc.logits, label, &dlogits, cfg.label_smoothing);
                }
                backward_cached(det, fc, dlogits, g);
            }
            double inv = 1.0 / static_cast<double>(end - start);
            for (double& x : g) x *= inv;
            opt.step(det.w, g);
        }
    }

    // Class prototypes: mean of L2-normalized features per class.
    std::array<int, kNumShapeClasses> counts{};
    for (auto& p : det.prototypes) p.assign(kDetectorFeatureDim, 0.0);
    for (const auto& item : items) {
        Vec f = det.features(item.image);
        double n = vec_norm(f);
        if (n == 0.0) continue;
        int cls = static_cast<int>(item.spec.shape);
        for (int i = 0; i < kDetectorFeatureDim; ++i) det.prototypes[cls][i] += f[i] / n;
        ++counts[cls];
    }
    for (int cls = 0; cls < kNumShapeClasses; ++cls)
        if (counts[cls] > 0)
            for (double& x : det.prototypes[cls]) x /= counts[cls];
    return det;
}

void save_detector(const std::string& dir, const Detector& det) {
    fs::create_directories(dir);
    std::ofstream out(fs::path(dir) / "detector.bin", std::ios::binary);
    if (!out) throw ConfigError("save_detector: cannot write detector.bin");
    std::uint64_t n = det.w.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(det.w.data()),
              static_cast<std::streamsize>(n * sizeof(double)));

    nlohmann::json meta;
    meta["tau"] = det.tau;
    meta["feature_dim"] = kDetectorFeatureDim;
    meta["sha256"] = sha256_file_hex((fs::path(dir) / "detector.bin").string());
    for (int cls = 0; cls < kNumShapeClasses; ++cls)
        meta["prototypes"][shape_name(static_cast<ShapeClass>(cls))] = det.prototypes[cls];
    std::ofstream jm(fs::path(dir) / "detector.json");
    jm << meta.dump(2) << "\n";
}

Detector load_detector(const std::string& dir) {
    Detector det = Detector::create(0);
    std::ifstream in(fs::path(dir) / "detector.bin", std::ios::binary);
    if (!in) throw ConfigError("load_detector: cannot read detector.bin in " + dir);
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (n != det.w.size()) throw ConfigError("load_detector: parameter count mismatch");
    in.read(reinterpret_cast<char*>(det.w.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw ConfigError("load_detector: short read");

    std::ifstream jm(fs::path(dir) / "detector.json");
    if (!jm) throw ConfigError("load_detector: missing detector.json");
    nlohmann::json meta;
    jm >> meta;
    det.tau = meta.at("tau").get<double>();
    for (int cls = 0; cls < kNumShapeClasses; ++cls) {
        auto v = meta.at("prototypes").at(shape_name(static_cast<ShapeClass>(cls)));
        det.prototypes[cls] = v.get<Vec>();
    }
    return det;
}

}  // namespace recall
