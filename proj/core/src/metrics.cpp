#include "recall/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "recall/errors.hpp"
#include "recall/hash.hpp"

namespace recall {

double asr(const std::vector<AttackResult>& results) {
    if (results.empty()) throw ConfigError("asr: no results");
    int hits = 0;
    for (const auto& r : results)
        if (r.success) ++hits;
    return 100.0 * hits / results.size();
}

double alignment_score(const Detector& det, const Image& img, ShapeClass target) {
    int ti = static_cast<int>(target);
    if (ti < 0 || ti >= kNumShapeClasses) throw ConfigError("alignment_score: bad target");
    return 100.0 * cosine_similarity(det.features(img), det.prototypes[ti]);
}

double diversity_lpips_proxy(const Detector& det, const std::vector<Image>& images) {
    if (images.size() < 2) return 0.0;
    std::vector<Vec> feats;
    feats.reserve(images.size());
    for (const auto& img : images) feats.push_back(det.features(img));
    double total = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < feats.size(); ++i)
        for (std::size_t j = i + 1; j < feats.size(); ++j) {
            total += (1.0 - cosine_similarity(feats[i], feats[j])) * 0.5;
            ++pairs;
        }
    return total / pairs;
}

double inception_proxy(const Detector& det, const std::vector<Image>& images) {
    if (images.empty()) throw ConfigError("inception_proxy: no images");
    std::vector<std::array<double, kNumShapeClasses>> ps;
    ps.reserve(images.size());
    std::array<double, kNumShapeClasses> marginal{};
    for (const auto& img : images) {
        auto p = det.probs(img);
        for (int k = 0; k < kNumShapeClasses; ++k) marginal[k] += p[k];
        ps.push_back(p);
    }
    for (double& m : marginal) m /= images.size();
    double mean_kl = 0.0;
    for (const auto& p : ps) {
        double kl = 0.0;
        for (int k = 0; k < kNumShapeClasses; ++k)
            if (p[k] > 0.0) kl += p[k] * std::log(p[k] / std::max(marginal[k], 1e-300));
        mean_kl += kl;
    }
    mean_kl /= images.size();
    return std::clamp(std::exp(mean_kl), 1.0, static_cast<double>(kNumShapeClasses));
}

MetricsReport summarize(const std::vector<AttackResult>& results, const Detector& det) {
    if (results.empty()) throw ConfigError("summarize: no results");
    MetricsReport r;
    r.method = results.front().method;
    r.n = static_cast<int>(results.size());
    r.asr_percent = asr(results);

    std::vector<Image> finals;
    finals.reserve(results.size());
    std::string seed_blob;
    double align = 0.0, time_s = 0.0, steps = 0.0;
    for (const auto& res : results) {
        align += res.alignment;
        time_s += res.wall_time_s;
        steps += res.steps_used;
        finals.push_back(res.final_image);
        seed_blob += res.prompt.text();
        seed_blob += ':';
        seed_blob += std::to_string(res.seed);
        seed_blob += '\n';
    }
    r.mean_alignment = align / r.n;
    r.mean_time_s = time_s / r.n;
    r.mean_steps = steps / r.n;
    r.lpips_proxy = diversity_lpips_proxy(det, finals);
    r.is_proxy = inception_proxy(det, finals);
    r.seed_set_hash = sha256_hex(seed_blob);
    return r;
}

std::string metrics_json(const std::vector<MetricsReport>& reports) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : reports) {
        out.push_back({{"task", r.task},
                       {"bundle", r.bundle},
                       {"method", r.method},
                       {"asr", r.asr_percent},
                       {"alignment", r.mean_alignment},
                       {"lpips_proxy", r.lpips_proxy},
                       {"is_proxy", r.is_proxy},
                       {"mean_steps", r.mean_steps},
                       {"n", r.n},
                       {"seed_set_hash", r.seed_set_hash}});
    }
    return out.dump(2) + "\n";
}

std::string csv_header() {
    return "task,bundle,method,asr,alignment,lpips_proxy,is_proxy,time_s,n,seed_set_hash\n";
}

std::string csv_row(const MetricsReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.4f,%.4f,%.6f,%.6f,%.3f,%d,%s\n", r.task.c_str(),
                  r.bundle.c_str(), r.method.c_str(), r.asr_percent, r.mean_alignment,
                  r.lpips_proxy, r.is_proxy, r.mean_time_s, r.n, r.seed_set_hash.c_str());
    return buf;
}

}  // namespace recall
