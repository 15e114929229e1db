#pragma once

#include <string>
#include <vector>

#include "recall/attack.hpp"
#include "recall/detector.hpp"

namespace recall {

// Percentage of successful results, 0..100.
double asr(const std::vector<AttackResult>& results);

// 100 * cosine between the image's detector features and the class prototype.
double alignment_score(const Detector& det, const Image& img, ShapeClass target);

// Mean pairwise (1 - cosine)/2 over detector features; 0 for fewer than two
// images, higher means more diverse.
double diversity_lpips_proxy(const Detector& det, const std::vector<Image>& images);

// exp(mean KL(p(y|x) || mean p)) over detector class posteriors; ranges from
// 1 (all identical) to the class count (confident and evenly spread).
double inception_proxy(const Detector& det, const std::vector<Image>& images);

struct MetricsReport {
    std::string task;    // e.g. "attack", "baseline", "ablation:eta=0.1"
    std::string bundle;  // e.g. "esd_finetune", "sld_guidance", "base"
    std::string method;  // "recall" or a baseline name
    double asr_percent = 0.0;
    double mean_alignment = 0.0;
    double lpips_proxy = 0.0;
    double is_proxy = 1.0;
    double mean_time_s = 0.0;
    double mean_steps = 0.0;
    int n = 0;
    std::string seed_set_hash;
};

// Aggregates one homogeneous batch of results (same method and bundle).
MetricsReport summarize(const std::vector<AttackResult>& results, const Detector& det);

// JSON serialization deliberately leaves wall times out so byte-identical
// reruns stay byte-identical; times are only reported in the CSV.
std::string metrics_json(const std::vector<MetricsReport>& reports);
std::string csv_header();
std::string csv_row(const MetricsReport& r);

}  // namespace recall
