#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "recall/attack.hpp"
#include "recall/bundle.hpp"
#include "recall/codec.hpp"
#include "recall/denoiser.hpp"
#include "recall/detector.hpp"
#include "recall/metrics.hpp"
#include "recall/text_encoder.hpp"
#include "recall/unlearning.hpp"

namespace recall {

struct DataConfig {
    int n = 3000;
    std::uint64_t seed = 1;
    std::map<ShapeClass, double> mix;  // empty = uniform
};

struct ScheduleConfig {
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    int ddim_steps = 50;
};

struct GateConfig {
    double codec_mae_max = 0.08;
    double detector_acc_min = 0.97;
    double base_detection_min = 0.80;
    double forgetting_max = 0.20;
    double preservation_margin = 0.15;
    double preservation_sigma = 0.70;
};

struct UnlearnStageConfig {
    std::vector<UnlearnMethod> methods{UnlearnMethod::esd_finetune, UnlearnMethod::sld_guidance};
    double negative_guidance = 1.0;
    int finetune_epochs = 8;
    int finetune_samples = 240;
    double lr = 1e-3;
    double sld_safety_scale = 2.0;
    int forget_seeds = 8;    // generations per erased prompt
    int preserve_seeds = 4;  // paired generations per retained prompt
};

struct AttackStageConfig {
    AttackConfig optimizer;
    int prompt_count = 50;
    std::uint64_t reference_seed = 7;
    std::vector<std::string> bundles{"esd_finetune", "sld_guidance"};
};

struct AblateStageConfig {
    int prompt_count = 12;
    std::string bundle = "esd_finetune";
};

struct ExperimentConfig {
    ShapeClass erased = ShapeClass::circle;
    std::string output_dir = "runs";
    std::uint64_t master_seed = 1;
    int base_eval_seeds = 4;  // text-only generations per prompt for the base gate
    DataConfig data;
    ScheduleConfig schedule;
    GateConfig gates;
    CodecTrainConfig codec;
    TextEncoderTrainConfig text;
    DenoiserTrainConfig denoiser;
    DetectorTrainConfig detector;
    UnlearnStageConfig unlearn;
    AttackStageConfig attack;
    AblateStageConfig ablate;
};

// Strict parse: unknown keys, bad types and out-of-range values all raise
// ConfigError. Absent keys keep their defaults.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

std::string config_canonical_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

// Relative output dirs resolve under $RECALL_LAB_HOME when set, otherwise
// under the working directory. Absolute paths pass through.
std::string resolve_output_root(const std::string& output_dir);

struct AttackJob {
    int prompt_id = 0;
    TextPrompt prompt;
    std::uint64_t seed = 0;
};

// prompt_count jobs over the erased shape, cycling the three colors, each
// with a seed derived from (master_seed, job stream, prompt_id).
std::vector<AttackJob> attack_jobs(const ExperimentConfig& cfg);

// manifest.json with the config hash and a sha256 per listed file.
void write_stage_manifest(const std::string& dir, const std::string& stage,
                          const ExperimentConfig& cfg, const std::vector<std::string>& files,
                          double wall_time_s);

// Stage entry points. Each writes into <output root>/<stage dir> and throws
// GateError when a quality gate fails (after recording what it measured).
void run_gen_data(const ExperimentConfig& cfg);
void run_train(const ExperimentConfig& cfg);
void run_unlearn_stage(const ExperimentConfig& cfg);
void run_attack_stage(const ExperimentConfig& cfg, const std::string& bundle_filter = "");
void run_baseline_stage(const ExperimentConfig& cfg, const std::string& bundle_filter = "");
void run_ablations(const ExperimentConfig& cfg);
void run_report(const ExperimentConfig& cfg);

}  // namespace recall
