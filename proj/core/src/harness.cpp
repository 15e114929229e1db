#include "recall/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "recall/errors.hpp"
#include "recall/hash.hpp"
#include "recall/plot.hpp"
#include "recall/rng.hpp"
#include "recall/sampler.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace recall {

namespace {

constexpr std::uint64_t kSeedCodec = 0x636f6465;
constexpr std::uint64_t kSeedText = 0x74657874;
constexpr std::uint64_t kSeedDenoiser = 0x64656e6f;
constexpr std::uint64_t kSeedDetector = 0x64657463;
constexpr std::uint64_t kSeedBaseEval = 0x62657631;
constexpr std::uint64_t kSeedForget = 0x666f7267;
constexpr std::uint64_t kSeedPreserve = 0x70726573;
constexpr std::uint64_t kSeedUnlearn = 0x756e6c72;
constexpr std::uint64_t kSeedJobs = 0x6a6f6273;

struct StageTimer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (item.key() == a) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError(std::string(where) + ": unknown key '" + item.key() + "'");
    }
}

template <typename T>
void read_field(const json& j, const char* where, const char* key, T& v) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        it->get_to(v);
    } catch (const json::exception& e) {
        throw ConfigError(std::string(where) + "." + key + ": " + e.what());
    }
}

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    out << content;
}

void parse_data(const json& j, DataConfig& c) {
    check_keys(j, "data", {"n", "seed", "mix"});
    read_field(j, "data", "n", c.n);
    read_field(j, "data", "seed", c.seed);
    if (auto it = j.find("mix"); it != j.end()) {
        if (!it->is_object()) throw ConfigError("data.mix: expected an object");
        c.mix.clear();
        for (const auto& item : it->items()) {
            if (!item.value().is_number())
                throw ConfigError("data.mix." + item.key() + ": expected a number");
            c.mix[parse_shape(item.key())] = item.value().get<double>();
        }
    }
    if (c.n <= 0) throw ConfigError("data.n must be positive");
}

void parse_schedule(const json& j, ScheduleConfig& c) {
    check_keys(j, "schedule", {"T", "beta_start", "beta_end", "ddim_steps"});
    read_field(j, "schedule", "T", c.T);
    read_field(j, "schedule", "beta_start", c.beta_start);
    read_field(j, "schedule", "beta_end", c.beta_end);
    read_field(j, "schedule", "ddim_steps", c.ddim_steps);
}

void parse_gates(const json& j, GateConfig& c) {
    check_keys(j, "gates",
               {"codec_mae_max", "detector_acc_min", "base_detection_min", "forgetting_max",
                "preservation_margin", "preservation_sigma"});
    read_field(j, "gates", "codec_mae_max", c.codec_mae_max);
    read_field(j, "gates", "detector_acc_min", c.detector_acc_min);
    read_field(j, "gates", "base_detection_min", c.base_detection_min);
    read_field(j, "gates", "forgetting_max", c.forgetting_max);
    read_field(j, "gates", "preservation_margin", c.preservation_margin);
    read_field(j, "gates", "preservation_sigma", c.preservation_sigma);
}

void parse_codec_cfg(const json& j, CodecTrainConfig& c) {
    check_keys(j, "codec", {"epochs", "batch", "lr", "latent_l2"});
    read_field(j, "codec", "epochs", c.epochs);
    read_field(j, "codec", "batch", c.batch);
    read_field(j, "codec", "lr", c.lr);
    read_field(j, "codec", "latent_l2", c.latent_l2);
}

void parse_text_cfg(const json& j, TextEncoderTrainConfig& c) {
    check_keys(j, "text", {"steps", "lr"});
    read_field(j, "text", "steps", c.steps);
    read_field(j, "text", "lr", c.lr);
}

void parse_denoiser_cfg(const json& j, DenoiserTrainConfig& c) {
    check_keys(j, "denoiser",
               {"epochs", "batch", "lr", "cond_dropout", "img_cond_use_prob", "img_cond_noise",
                "val_fraction"});
    read_field(j, "denoiser", "epochs", c.epochs);
    read_field(j, "denoiser", "batch", c.batch);
    read_field(j, "denoiser", "lr", c.lr);
    read_field(j, "denoiser", "cond_dropout", c.cond_dropout);
    read_field(j, "denoiser", "img_cond_use_prob", c.img_cond_use_prob);
    read_field(j, "denoiser", "img_cond_noise", c.img_cond_noise);
    read_field(j, "denoiser", "val_fraction", c.val_fraction);
}

void parse_detector_cfg(const json& j, DetectorTrainConfig& c) {
    check_keys(j, "detector",
               {"epochs", "batch", "lr", "label_smoothing", "blank_fraction", "noise_aug"});
    read_field(j, "detector", "epochs", c.epochs);
    read_field(j, "detector", "batch", c.batch);
    read_field(j, "detector", "lr", c.lr);
    read_field(j, "detector", "label_smoothing", c.label_smoothing);
    read_field(j, "detector", "blank_fraction", c.blank_fraction);
    read_field(j, "detector", "noise_aug", c.noise_aug);
}

void parse_unlearn_cfg(const json& j, UnlearnStageConfig& c) {
    check_keys(j, "unlearn",
               {"methods", "negative_guidance", "finetune_epochs", "finetune_samples", "lr",
                "sld_safety_scale", "forget_seeds", "preserve_seeds"});
    if (auto it = j.find("methods"); it != j.end()) {
        if (!it->is_array()) throw ConfigError("unlearn.methods: expected an array");
        c.methods.clear();
        for (const auto& m : *it) {
            if (!m.is_string()) throw ConfigError("unlearn.methods: expected strings");
            UnlearnMethod parsed = parse_unlearn_method(m.get<std::string>());
            if (parsed == UnlearnMethod::none)
                throw ConfigError("unlearn.methods: 'none' is not a method");
            if (std::find(c.methods.begin(), c.methods.end(), parsed) != c.methods.end())
                throw ConfigError("unlearn.methods: duplicate entry");
            c.methods.push_back(parsed);
        }
        if (c.methods.empty()) throw ConfigError("unlearn.methods: empty");
    }
    read_field(j, "unlearn", "negative_guidance", c.negative_guidance);
    read_field(j, "unlearn", "finetune_epochs", c.finetune_epochs);
    read_field(j, "unlearn", "finetune_samples", c.finetune_samples);
    read_field(j, "unlearn", "lr", c.lr);
    read_field(j, "unlearn", "sld_safety_scale", c.sld_safety_scale);
    read_field(j, "unlearn", "forget_seeds", c.forget_seeds);
    read_field(j, "unlearn", "preserve_seeds", c.preserve_seeds);
    if (c.forget_seeds < 1 || c.preserve_seeds < 1)
        throw ConfigError("unlearn: forget_seeds and preserve_seeds must be >= 1");
}

const std::vector<std::string>& known_bundle_names() {
    static const std::vector<std::string> names{"base", "esd_finetune", "sld_guidance"};
    return names;
}

void check_bundle_name(const std::string& name, const char* where) {
    const auto& known = known_bundle_names();
    if (std::find(known.begin(), known.end(), name) == known.end())
        throw ConfigError(std::string(where) + ": unknown bundle '" + name + "'");
}

void parse_attack_cfg(const json& j, AttackStageConfig& c) {
    check_keys(j, "attack",
               {"lambda_blend", "eta_step", "beta_momentum", "omega", "gamma_integrate",
                "n_inner", "epoch_interval", "ddim_steps", "update_sign", "early_stop_every",
                "refresh_gradient_each_inner", "guidance_scale", "prompt_count",
                "reference_seed", "bundles"});
    read_field(j, "attack", "lambda_blend", c.optimizer.lambda_blend);
    read_field(j, "attack", "eta_step", c.optimizer.eta_step);
    read_field(j, "attack", "beta_momentum", c.optimizer.beta_momentum);
    read_field(j, "attack", "omega", c.optimizer.omega);
    read_field(j, "attack", "gamma_integrate", c.optimizer.gamma_integrate);
    read_field(j, "attack", "n_inner", c.optimizer.n_inner);
    read_field(j, "attack", "epoch_interval", c.optimizer.epoch_interval);
    read_field(j, "attack", "ddim_steps", c.optimizer.ddim_steps);
    if (auto it = j.find("update_sign"); it != j.end()) {
        std::string s;
        read_field(j, "attack", "update_sign", s);
        if (s == "descend")
            c.optimizer.update_sign = UpdateSign::descend;
        else if (s == "ascend")
            c.optimizer.update_sign = UpdateSign::ascend;
        else
            throw ConfigError("attack.update_sign: expected 'descend' or 'ascend'");
    }
    read_field(j, "attack", "early_stop_every", c.optimizer.early_stop_every);
    read_field(j, "attack", "refresh_gradient_each_inner",
               c.optimizer.refresh_gradient_each_inner);
    read_field(j, "attack", "guidance_scale", c.optimizer.guidance_scale);
    read_field(j, "attack", "prompt_count", c.prompt_count);
    read_field(j, "attack", "reference_seed", c.reference_seed);
    if (auto it = j.find("bundles"); it != j.end()) {
        if (!it->is_array()) throw ConfigError("attack.bundles: expected an array");
        c.bundles.clear();
        for (const auto& b : *it) {
            if (!b.is_string()) throw ConfigError("attack.bundles: expected strings");
            std::string name = b.get<std::string>();
            check_bundle_name(name, "attack.bundles");
            c.bundles.push_back(name);
        }
        if (c.bundles.empty()) throw ConfigError("attack.bundles: empty");
    }
    if (c.prompt_count <= 0) throw ConfigError("attack.prompt_count must be positive");
    validate_attack_config(c.optimizer);
}

void parse_ablate_cfg(const json& j, AblateStageConfig& c) {
    check_keys(j, "ablate", {"prompt_count", "bundle"});
    read_field(j, "ablate", "prompt_count", c.prompt_count);
    read_field(j, "ablate", "bundle", c.bundle);
    check_bundle_name(c.bundle, "ablate.bundle");
    if (c.prompt_count <= 0) throw ConfigError("ablate.prompt_count must be positive");
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["concept"] = shape_name(c.erased);
    j["output_dir"] = c.output_dir;
    j["master_seed"] = c.master_seed;
    j["base_eval_seeds"] = c.base_eval_seeds;
    json mix = json::object();
    for (const auto& [shape, weight] : c.data.mix) mix[shape_name(shape)] = weight;
    j["data"] = {{"n", c.data.n}, {"seed", c.data.seed}, {"mix", mix}};
    j["schedule"] = {{"T", c.schedule.T},
                     {"beta_start", c.schedule.beta_start},
                     {"beta_end", c.schedule.beta_end},
                     {"ddim_steps", c.schedule.ddim_steps}};
    j["gates"] = {{"codec_mae_max", c.gates.codec_mae_max},
                  {"detector_acc_min", c.gates.detector_acc_min},
                  {"base_detection_min", c.gates.base_detection_min},
                  {"forgetting_max", c.gates.forgetting_max},
                  {"preservation_margin", c.gates.preservation_margin},
                  {"preservation_sigma", c.gates.preservation_sigma}};
    j["codec"] = {{"epochs", c.codec.epochs},
                  {"batch", c.codec.batch},
                  {"lr", c.codec.lr},
                  {"latent_l2", c.codec.latent_l2}};
    j["text"] = {{"steps", c.text.steps}, {"lr", c.text.lr}};
    j["denoiser"] = {{"epochs", c.denoiser.epochs},
                     {"batch", c.denoiser.batch},
                     {"lr", c.denoiser.lr},
                     {"cond_dropout", c.denoiser.cond_dropout},
                     {"img_cond_use_prob", c.denoiser.img_cond_use_prob},
                     {"img_cond_noise", c.denoiser.img_cond_noise},
                     {"val_fraction", c.denoiser.val_fraction}};
    j["detector"] = {{"epochs", c.detector.epochs},
                     {"batch", c.detector.batch},
                     {"lr", c.detector.lr},
                     {"label_smoothing", c.detector.label_smoothing},
                     {"blank_fraction", c.detector.blank_fraction},
                     {"noise_aug", c.detector.noise_aug}};
    json methods = json::array();
    for (UnlearnMethod m : c.unlearn.methods) methods.push_back(unlearn_method_name(m));
    j["unlearn"] = {{"methods", methods},
                    {"negative_guidance", c.unlearn.negative_guidance},
                    {"finetune_epochs", c.unlearn.finetune_epochs},
                    {"finetune_samples", c.unlearn.finetune_samples},
                    {"lr", c.unlearn.lr},
                    {"sld_safety_scale", c.unlearn.sld_safety_scale},
                    {"forget_seeds", c.unlearn.forget_seeds},
                    {"preserve_seeds", c.unlearn.preserve_seeds}};
    j["attack"] = {{"lambda_blend", c.attack.optimizer.lambda_blend},
                   {"eta_step", c.attack.optimizer.eta_step},
                   {"beta_momentum", c.attack.optimizer.beta_momentum},
                   {"omega", c.attack.optimizer.omega},
                   {"gamma_integrate", c.attack.optimizer.gamma_integrate},
                   {"n_inner", c.attack.optimizer.n_inner},
                   {"epoch_interval", c.attack.optimizer.epoch_interval},
                   {"ddim_steps", c.attack.optimizer.ddim_steps},
                   {"update_sign",
                    c.attack.optimizer.update_sign == UpdateSign::descend ? "descend" : "ascend"},
                   {"early_stop_every", c.attack.optimizer.early_stop_every},
                   {"refresh_gradient_each_inner", c.attack.optimizer.refresh_gradient_each_inner},
                   {"guidance_scale", c.attack.optimizer.guidance_scale},
                   {"prompt_count", c.attack.prompt_count},
                   {"reference_seed", c.attack.reference_seed},
                   {"bundles", c.attack.bundles}};
    j["ablate"] = {{"prompt_count", c.ablate.prompt_count}, {"bundle", c.ablate.bundle}};
    return j;
}

std::map<ShapeClass, double> effective_mix(const DataConfig& c) {
    if (!c.mix.empty()) return c.mix;
    std::map<ShapeClass, double> mix;
    for (int s = 0; s < kNumShapeClasses; ++s) mix[static_cast<ShapeClass>(s)] = 1.0;
    return mix;
}

std::vector<DatasetItem> load_training_set(const ExperimentConfig& cfg) {
    return sample_dataset(cfg.data.n, effective_mix(cfg.data), cfg.data.seed);
}

std::vector<TextPrompt> erased_prompts(const ExperimentConfig& cfg) {
    std::vector<TextPrompt> prompts;
    for (int c = 0; c < kNumColors; ++c)
        prompts.push_back(make_prompt(cfg.erased, static_cast<ColorName>(c)));
    return prompts;
}

std::vector<TextPrompt> retained_prompts(const ExperimentConfig& cfg) {
    std::vector<TextPrompt> prompts;
    for (int s = 0; s < kNumShapeClasses; ++s) {
        if (static_cast<ShapeClass>(s) == cfg.erased) continue;
        for (int c = 0; c < kNumColors; ++c)
            prompts.push_back(make_prompt(static_cast<ShapeClass>(s), static_cast<ColorName>(c)));
    }
    return prompts;
}

std::vector<std::uint64_t> derived_seeds(const ExperimentConfig& cfg, std::uint64_t stream,
                                         int count) {
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < count; ++i)
        seeds.push_back(derive_seed(cfg.master_seed, stream, static_cast<std::uint64_t>(i)));
    return seeds;
}

std::string models_dir(const ExperimentConfig& cfg) {
    return resolve_output_root(cfg.output_dir) + "/models";
}

// The attack and baseline stages refuse to run against an unlearned bundle
// whose manifest does not carry passing forgetting and preservation gates.
void require_attack_gates(const ModelBundle& bundle, const GateConfig& gates,
                          const std::string& name) {
    if (bundle.meta.kind != BundleKind::unlearned) return;
    if (!bundle.meta.forgetting_rate || !bundle.meta.preservation_pass)
        throw GateError("bundle '" + name + "' has no recorded unlearning gates; run unlearn first");
    if (*bundle.meta.forgetting_rate > gates.forgetting_max)
        throw GateError("bundle '" + name + "' forgetting rate " +
                        fmt_g(*bundle.meta.forgetting_rate) + " exceeds " +
                        fmt_g(gates.forgetting_max));
    if (!*bundle.meta.preservation_pass)
        throw GateError("bundle '" + name + "' failed its preservation gate");
}

std::string job_image_name(const AttackJob& job, const char* suffix) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%02d_%llu_%s.png", job.prompt_id,
                  static_cast<unsigned long long>(job.seed), suffix);
    return buf;
}

json result_row(const AttackJob& job, const AttackResult& res) {
    return json{{"prompt_id", job.prompt_id},
                {"prompt", res.prompt.text()},
                {"seed", res.seed},
                {"method", res.method},
                {"success", res.success},
                {"steps_used", res.steps_used},
                {"detector_prob", res.detector_prob},
                {"alignment", res.alignment},
                {"time_s", res.wall_time_s}};
}

struct CsvRecord {
    std::string task, bundle, method;
    double asr = 0.0, alignment = 0.0, lpips = 0.0, is_proxy = 0.0, time_s = 0.0;
    int n = 0;
};

std::vector<CsvRecord> parse_csv_rows(const std::vector<std::string>& lines) {
    std::vector<CsvRecord> rows;
    for (const auto& line : lines) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (f.size() < 10 || f[0] == "task") continue;
        CsvRecord r;
        r.task = f[0];
        r.bundle = f[1];
        r.method = f[2];
        r.asr = std::atof(f[3].c_str());
        r.alignment = std::atof(f[4].c_str());
        r.lpips = std::atof(f[5].c_str());
        r.is_proxy = std::atof(f[6].c_str());
        r.time_s = std::atof(f[7].c_str());
        r.n = std::atoi(f[8].c_str());
        rows.push_back(r);
    }
    return rows;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    ExperimentConfig c;
    check_keys(j, "config",
               {"concept", "output_dir", "master_seed", "base_eval_seeds", "data", "schedule",
                "gates", "codec", "text", "denoiser", "detector", "unlearn", "attack", "ablate"});
    if (auto it = j.find("concept"); it != j.end()) {
        if (!it->is_string()) throw ConfigError("config.concept: expected a string");
        c.erased = parse_shape(it->get<std::string>());
    }
    read_field(j, "config", "output_dir", c.output_dir);
    read_field(j, "config", "master_seed", c.master_seed);
    read_field(j, "config", "base_eval_seeds", c.base_eval_seeds);
    if (c.base_eval_seeds < 1) throw ConfigError("base_eval_seeds must be >= 1");
    if (auto it = j.find("data"); it != j.end()) parse_data(*it, c.data);
    if (auto it = j.find("schedule"); it != j.end()) parse_schedule(*it, c.schedule);
    if (auto it = j.find("gates"); it != j.end()) parse_gates(*it, c.gates);
    if (auto it = j.find("codec"); it != j.end()) parse_codec_cfg(*it, c.codec);
    if (auto it = j.find("text"); it != j.end()) parse_text_cfg(*it, c.text);
    if (auto it = j.find("denoiser"); it != j.end()) parse_denoiser_cfg(*it, c.denoiser);
    if (auto it = j.find("detector"); it != j.end()) parse_detector_cfg(*it, c.detector);
    if (auto it = j.find("unlearn"); it != j.end()) parse_unlearn_cfg(*it, c.unlearn);
    if (auto it = j.find("attack"); it != j.end()) parse_attack_cfg(*it, c.attack);
    if (auto it = j.find("ablate"); it != j.end()) parse_ablate_cfg(*it, c.ablate);
    make_schedule(c.schedule.T, c.schedule.beta_start, c.schedule.beta_end,
                  c.schedule.ddim_steps);  // validates the schedule parameters
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_canonical_json(const ExperimentConfig& cfg) {
    return config_to_json(cfg).dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
    return sha256_hex(config_canonical_json(cfg));
}

std::string resolve_output_root(const std::string& output_dir) {
    fs::path p(output_dir);
    if (p.is_absolute()) return p.lexically_normal().string();
    const char* home = std::getenv("RECALL_LAB_HOME");
    if (home && *home) return (fs::path(home) / p).lexically_normal().string();
    return (fs::current_path() / p).lexically_normal().string();
}

std::vector<AttackJob> attack_jobs(const ExperimentConfig& cfg) {
    std::vector<AttackJob> jobs;
    jobs.reserve(cfg.attack.prompt_count);
    for (int i = 0; i < cfg.attack.prompt_count; ++i) {
        AttackJob job;
        job.prompt_id = i;
        job.prompt = make_prompt(cfg.erased, static_cast<ColorName>(i % kNumColors));
        job.seed = derive_seed(cfg.master_seed, kSeedJobs, static_cast<std::uint64_t>(i));
        jobs.push_back(job);
    }
    return jobs;
}

void write_stage_manifest(const std::string& dir, const std::string& stage,
                          const ExperimentConfig& cfg, const std::vector<std::string>& files,
                          double wall_time_s) {
    json manifest;
    manifest["stage"] = stage;
    manifest["config_hash"] = config_hash(cfg);
    manifest["master_seed"] = cfg.master_seed;
    manifest["wall_time_s"] = wall_time_s;
    std::vector<std::string> sorted = files;
    std::sort(sorted.begin(), sorted.end());
    json list = json::array();
    for (const auto& f : sorted)
        list.push_back({{"file", f}, {"sha256", sha256_file_hex(dir + "/" + f)}});
    manifest["files"] = list;
    write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

void run_gen_data(const ExperimentConfig& cfg) {
    StageTimer timer;
    std::string dir = resolve_output_root(cfg.output_dir) + "/data";
    fs::create_directories(dir);
    auto items = load_training_set(cfg);
    export_dataset(dir, items);

    std::map<std::string, int> shape_counts, color_counts;
    for (const auto& item : items) {
        shape_counts[shape_name(item.spec.shape)]++;
        color_counts[color_name(item.spec.color)]++;
    }
    json summary;
    summary["n"] = cfg.data.n;
    summary["seed"] = cfg.data.seed;
    summary["vocab_hash"] = vocab_hash();
    summary["shape_counts"] = shape_counts;
    summary["color_counts"] = color_counts;
    write_text_file(dir + "/summary.json", summary.dump(2) + "\n");
    write_stage_manifest(dir, "gen-data", cfg, {"index.json", "summary.json"}, timer.seconds());
    std::printf("gen-data: %d items -> %s\n", cfg.data.n, dir.c_str());
}

void run_train(const ExperimentConfig& cfg) {
    StageTimer timer;
    std::string dir = models_dir(cfg);
    fs::create_directories(dir);
    auto items = load_training_set(cfg);

    json summary;
    std::vector<std::string> failures;

    CodecTrainConfig codec_cfg = cfg.codec;
    codec_cfg.seed = derive_seed(cfg.master_seed, kSeedCodec);
    ImageCodec codec = train_codec(items, codec_cfg);
    double mae = codec_mae(codec, items);
    summary["codec_mae"] = mae;
    std::printf("train: codec mae %.4f (gate <= %.2f)\n", mae, cfg.gates.codec_mae_max);
    if (mae > cfg.gates.codec_mae_max)
        failures.push_back("codec mae " + fmt_g(mae) + " > " + fmt_g(cfg.gates.codec_mae_max));

    DetectorTrainConfig det_cfg = cfg.detector;
    det_cfg.seed = derive_seed(cfg.master_seed, kSeedDetector);
    Detector det = train_detector(items, det_cfg);
    double acc = detector_accuracy(det, items);
    summary["detector_accuracy"] = acc;
    std::printf("train: detector accuracy %.4f (gate >= %.2f)\n", acc, cfg.gates.detector_acc_min);
    if (acc < cfg.gates.detector_acc_min)
        failures.push_back("detector accuracy " + fmt_g(acc) + " < " +
                           fmt_g(cfg.gates.detector_acc_min));

    TextEncoderTrainConfig text_cfg = cfg.text;
    text_cfg.seed = derive_seed(cfg.master_seed, kSeedText);
    TextEncoder text = train_text_encoder(text_cfg);

    NoiseSchedule sched = make_schedule(cfg.schedule.T, cfg.schedule.beta_start,
                                        cfg.schedule.beta_end, cfg.schedule.ddim_steps);
    DenoiserTrainConfig den_cfg = cfg.denoiser;
    den_cfg.seed = derive_seed(cfg.master_seed, kSeedDenoiser);
    DenoiserTrainResult den = train_denoiser(codec, text, sched, items, den_cfg);
    summary["denoiser_val_loss_initial"] = den.val_loss_initial;
    summary["denoiser_val_loss_final"] = den.val_loss_final;
    std::printf("train: denoiser val loss %.4f -> %.4f\n", den.val_loss_initial,
                den.val_loss_final);

    ModelBundle bundle;
    bundle.codec = std::move(codec);
    bundle.text = std::move(text);
    bundle.denoiser = std::move(den.model);
    bundle.schedule = sched;
    bundle.meta.kind = BundleKind::base;
    bundle.meta.method = UnlearnMethod::none;
    bundle.meta.train_seed = cfg.master_seed;
    bundle.meta.epochs = cfg.denoiser.epochs;

    // Text-only generation quality over every prompt in the world.
    double guidance = cfg.attack.optimizer.guidance_scale;
    json per_shape = json::object();
    int hits_total = 0, n_total = 0, eval_idx = 0;
    for (int s = 0; s < kNumShapeClasses; ++s) {
        ShapeClass shape = static_cast<ShapeClass>(s);
        int hits = 0, n = 0;
        for (int c = 0; c < kNumColors; ++c) {
            GenerationRequest req;
            req.prompt = make_prompt(shape, static_cast<ColorName>(c));
            req.guidance_scale = guidance;
            for (int i = 0; i < cfg.base_eval_seeds; ++i) {
                req.seed = derive_seed(cfg.master_seed, kSeedBaseEval,
                                       static_cast<std::uint64_t>(eval_idx++));
                Image img = generate(bundle, req);
                if (detect(det, img, shape).second) ++hits;
                ++n;
            }
        }
        per_shape[shape_name(shape)] = static_cast<double>(hits) / n;
        hits_total += hits;
        n_total += n;
    }
    double detection = static_cast<double>(hits_total) / n_total;
    summary["base_detection_rate"] = detection;
    summary["base_detection_per_shape"] = per_shape;
    std::printf("train: base text-only detection %.3f (gate >= %.2f)\n", detection,
                cfg.gates.base_detection_min);
    if (detection < cfg.gates.base_detection_min)
        failures.push_back("base detection " + fmt_g(detection) + " < " +
                           fmt_g(cfg.gates.base_detection_min));

    save_bundle(dir + "/base", bundle);
    save_detector(dir + "/base/detector", det);
    summary["gates_passed"] = failures.empty();
    summary["gate_failures"] = failures;
    write_text_file(dir + "/train_summary.json", summary.dump(2) + "\n");
    write_stage_manifest(dir, "train", cfg, {"train_summary.json", "base/manifest.json"},
                         timer.seconds());
    std::printf("train: done in %.1fs\n", timer.seconds());
    if (!failures.empty()) throw GateError("train gates failed: " + failures.front());
}

void run_unlearn_stage(const ExperimentConfig& cfg) {
    StageTimer timer;
    std::string dir = models_dir(cfg);
    ModelBundle base = load_bundle(dir + "/base");
    Detector det = load_detector(dir + "/base/detector");

    double guidance = cfg.attack.optimizer.guidance_scale;
    auto forget_prompts = erased_prompts(cfg);
    auto keep_prompts = retained_prompts(cfg);
    auto forget_seeds = derived_seeds(cfg, kSeedForget, cfg.unlearn.forget_seeds);
    auto keep_seeds = derived_seeds(cfg, kSeedPreserve, cfg.unlearn.preserve_seeds);

    json rows = json::array();
    std::vector<std::string> failures, manifest_files{"unlearn_summary.json"};

    for (UnlearnMethod method : cfg.unlearn.methods) {
        StageTimer method_timer;
        UnlearnConfig ucfg;
        ucfg.method = method;
        ucfg.erased = cfg.erased;
        ucfg.negative_guidance = cfg.unlearn.negative_guidance;
        ucfg.finetune_epochs = cfg.unlearn.finetune_epochs;
        ucfg.finetune_samples = cfg.unlearn.finetune_samples;
        ucfg.lr = cfg.unlearn.lr;
        ucfg.sld_safety_scale = cfg.unlearn.sld_safety_scale;
        ucfg.seed = derive_seed(cfg.master_seed, kSeedUnlearn,
                                static_cast<std::uint64_t>(method));
        ModelBundle bundle = run_unlearn(base, ucfg);

        double forgetting =
            evaluate_forgetting(bundle, forget_prompts, det, forget_seeds, guidance);
        PreservationResult pres = evaluate_preservation(
            bundle, base, keep_prompts, det, keep_seeds, cfg.gates.preservation_sigma, guidance);
        bool pres_pass =
            pres.detection_rate >= pres.base_detection_rate - cfg.gates.preservation_margin &&
            pres.mean_feature_cosine >= cfg.gates.preservation_sigma;

        bundle.meta.forgetting_rate = forgetting;
        bundle.meta.preservation_score = pres.detection_rate;
        bundle.meta.base_preservation_score = pres.base_detection_rate;
        bundle.meta.preservation_pass = pres_pass;

        const char* name = unlearn_method_name(method);
        save_bundle(dir + "/" + name, bundle);
        manifest_files.push_back(std::string(name) + "/manifest.json");

        std::printf("unlearn[%s]: forgetting %.3f (gate <= %.2f), preservation %.3f vs base "
                    "%.3f, cosine %.3f, pass=%d, %.1fs\n",
                    name, forgetting, cfg.gates.forgetting_max, pres.detection_rate,
                    pres.base_detection_rate, pres.mean_feature_cosine, pres_pass ? 1 : 0,
                    method_timer.seconds());
        rows.push_back({{"method", name},
                        {"forgetting_rate", forgetting},
                        {"preservation_rate", pres.detection_rate},
                        {"base_preservation_rate", pres.base_detection_rate},
                        {"mean_feature_cosine", pres.mean_feature_cosine},
                        {"preservation_pass", pres_pass},
                        {"time_s", method_timer.seconds()}});
        if (forgetting > cfg.gates.forgetting_max)
            failures.push_back(std::string(name) + ": forgetting " + fmt_g(forgetting) + " > " +
                               fmt_g(cfg.gates.forgetting_max));
        if (!pres_pass) failures.push_back(std::string(name) + ": preservation gate failed");
    }

    json summary;
    summary["methods"] = rows;
    summary["gates_passed"] = failures.empty();
    summary["gate_failures"] = failures;
    write_text_file(dir + "/unlearn_summary.json", summary.dump(2) + "\n");
    write_stage_manifest(dir, "unlearn", cfg, manifest_files, timer.seconds());
    if (!failures.empty()) throw GateError("unlearn gates failed: " + failures.front());
}

void run_attack_stage(const ExperimentConfig& cfg, const std::string& bundle_filter) {
    StageTimer timer;
    std::string root = resolve_output_root(cfg.output_dir);
    Detector det = load_detector(models_dir(cfg) + "/base/detector");
    Image reference = reference_image_for(cfg.erased, cfg.attack.reference_seed);
    auto jobs = attack_jobs(cfg);

    std::vector<std::string> bundles = cfg.attack.bundles;
    if (!bundle_filter.empty()) {
        check_bundle_name(bundle_filter, "attack --bundle");
        bundles = {bundle_filter};
    }

    for (const auto& name : bundles) {
        StageTimer bundle_timer;
        ModelBundle bundle = load_bundle(models_dir(cfg) + "/" + name);
        require_attack_gates(bundle, cfg.gates, name);

        std::string dir = root + "/attack/" + name;
        fs::create_directories(dir + "/images");
        std::vector<std::string> files{"results.json", "metrics.json", "results.csv"};

        std::vector<AttackResult> results;
        json rows = json::array();
        for (const auto& job : jobs) {
            AttackConfig acfg = cfg.attack.optimizer;
            acfg.seed = job.seed;
            AttackResult res = recall_attack(bundle, job.prompt, reference, acfg, det);
            std::string adv = "images/" + job_image_name(job, "adv");
            std::string fin = "images/" + job_image_name(job, "final");
            write_png(dir + "/" + adv, res.adversarial_image);
            write_png(dir + "/" + fin, res.final_image);
            files.push_back(adv);
            files.push_back(fin);
            json row = result_row(job, res);
            row["adv_image"] = adv;
            row["final_image"] = fin;
            rows.push_back(row);
            results.push_back(std::move(res));
        }

        MetricsReport report = summarize(results, det);
        report.task = "attack";
        report.bundle = name;
        write_text_file(dir + "/results.json", rows.dump(2) + "\n");
        write_text_file(dir + "/metrics.json", metrics_json({report}));
        write_text_file(dir + "/results.csv", csv_header() + csv_row(report));
        write_stage_manifest(dir, "attack", cfg, files, bundle_timer.seconds());
        std::printf("attack[%s]: asr %.1f%%, mean steps %.1f, %.1fs\n", name.c_str(),
                    report.asr_percent, report.mean_steps, bundle_timer.seconds());
    }
    std::printf("attack: done in %.1fs\n", timer.seconds());
}

void run_baseline_stage(const ExperimentConfig& cfg, const std::string& bundle_filter) {
    StageTimer timer;
    std::string root = resolve_output_root(cfg.output_dir);
    Detector det = load_detector(models_dir(cfg) + "/base/detector");
    Image reference = reference_image_for(cfg.erased, cfg.attack.reference_seed);
    auto jobs = attack_jobs(cfg);
    double guidance = cfg.attack.optimizer.guidance_scale;

    std::vector<std::string> bundles = cfg.attack.bundles;
    if (!bundle_filter.empty()) {
        check_bundle_name(bundle_filter, "baseline --bundle");
        bundles = {bundle_filter};
    }

    for (const auto& name : bundles) {
        StageTimer bundle_timer;
        ModelBundle bundle = load_bundle(models_dir(cfg) + "/" + name);
        require_attack_gates(bundle, cfg.gates, name);

        std::string dir = root + "/baseline/" + name;
        fs::create_directories(dir + "/images");
        std::vector<std::string> files{"results.json", "metrics.json", "results.csv"};

        json rows = json::array();
        std::vector<MetricsReport> reports;
        std::string csv = csv_header();
        for (int k = 0; k < 4; ++k) {
            BaselineKind kind = static_cast<BaselineKind>(k);
            std::vector<AttackResult> results;
            for (const auto& job : jobs) {
                AttackResult res =
                    run_baseline(kind, bundle, job.prompt, reference, job.seed, det, guidance);
                std::string fin = "images/" + std::string(baseline_name(kind)) + "_" +
                                  job_image_name(job, "final");
                write_png(dir + "/" + fin, res.final_image);
                files.push_back(fin);
                json row = result_row(job, res);
                row["final_image"] = fin;
                rows.push_back(row);
                results.push_back(std::move(res));
            }
            MetricsReport report = summarize(results, det);
            report.task = "baseline";
            report.bundle = name;
            reports.push_back(report);
            csv += csv_row(report);
            std::printf("baseline[%s/%s]: asr %.1f%%\n", name.c_str(), baseline_name(kind),
                        reports.back().asr_percent);
        }
        write_text_file(dir + "/results.json", rows.dump(2) + "\n");
        write_text_file(dir + "/metrics.json", metrics_json(reports));
        write_text_file(dir + "/results.csv", csv);
        write_stage_manifest(dir, "baseline", cfg, files, bundle_timer.seconds());
    }
    std::printf("baseline: done in %.1fs\n", timer.seconds());
}

void run_ablations(const ExperimentConfig& cfg) {
    StageTimer timer;
    std::string root = resolve_output_root(cfg.output_dir);
    Detector det = load_detector(models_dir(cfg) + "/base/detector");
    ModelBundle bundle = load_bundle(models_dir(cfg) + "/" + cfg.ablate.bundle);
    require_attack_gates(bundle, cfg.gates, cfg.ablate.bundle);
    Image reference = reference_image_for(cfg.erased, cfg.attack.reference_seed);

    ExperimentConfig jcfg = cfg;
    jcfg.attack.prompt_count = cfg.ablate.prompt_count;
    auto jobs = attack_jobs(jcfg);

    std::string dir = root + "/ablate";
    fs::create_directories(dir);

    std::vector<MetricsReport> reports;
    auto run_setting = [&](const std::string& task, const AttackConfig& base_cfg) {
        std::vector<AttackResult> results;
        for (const auto& job : jobs) {
            AttackConfig acfg = base_cfg;
            acfg.seed = job.seed;
            results.push_back(recall_attack(bundle, job.prompt, reference, acfg, det));
        }
        MetricsReport report = summarize(results, det);
        report.task = task;
        report.bundle = cfg.ablate.bundle;
        reports.push_back(report);
        std::printf("ablate[%s]: asr %.1f%%, alignment %.1f, lpips %.3f\n", task.c_str(),
                    report.asr_percent, report.mean_alignment, report.lpips_proxy);
        return report;
    };

    const AttackConfig base_cfg = cfg.attack.optimizer;

    std::map<double, MetricsReport> eta_rows;
    for (double eta : {0.1, 0.01, 0.001, 0.0001}) {
        AttackConfig acfg = base_cfg;
        acfg.eta_step = eta;
        eta_rows[eta] = run_setting("ablation:eta=" + fmt_g(eta), acfg);
    }

    std::map<double, MetricsReport> lambda_rows;
    for (double lambda : {0.10, 0.25, 0.50}) {
        AttackConfig acfg = base_cfg;
        acfg.lambda_blend = lambda;
        lambda_rows[lambda] = run_setting("ablation:lambda=" + fmt_g(lambda), acfg);
    }

    AttackConfig integ_on = base_cfg;
    AttackConfig integ_off = base_cfg;
    integ_off.gamma_integrate = 0.0;
    MetricsReport r_integ_on = run_setting("ablation:integration=on", integ_on);
    MetricsReport r_integ_off = run_setting("ablation:integration=off", integ_off);

    AttackConfig noise_on = base_cfg;
    AttackConfig noise_off = base_cfg;
    noise_off.lambda_blend = 1.0;  // init collapses to the reference, no noise
    MetricsReport r_noise_on = run_setting("ablation:noise_init=on", noise_on);
    MetricsReport r_noise_off = run_setting("ablation:noise_init=off", noise_off);

    json directions;
    directions["eta_interior_ge_large"] =
        eta_rows[0.001].asr_percent >= eta_rows[0.1].asr_percent;
    directions["integration_on_ge_off"] = r_integ_on.asr_percent >= r_integ_off.asr_percent;
    directions["noise_init_diversity_ge_off"] = r_noise_on.lpips_proxy >= r_noise_off.lpips_proxy;

    json summary;
    summary["directions"] = directions;
    summary["eta_asr"] = {{fmt_g(0.1), eta_rows[0.1].asr_percent},
                          {fmt_g(0.01), eta_rows[0.01].asr_percent},
                          {fmt_g(0.001), eta_rows[0.001].asr_percent},
                          {fmt_g(0.0001), eta_rows[0.0001].asr_percent}};
    json lam = json::object();
    for (const auto& [lambda, report] : lambda_rows)
        lam[fmt_g(lambda)] = {{"asr", report.asr_percent}, {"alignment", report.mean_alignment}};
    summary["lambda"] = lam;
    summary["integration"] = {{"on", r_integ_on.asr_percent}, {"off", r_integ_off.asr_percent}};
    summary["noise_init"] = {
        {"on", {{"lpips_proxy", r_noise_on.lpips_proxy}, {"alignment", r_noise_on.mean_alignment}}},
        {"off",
         {{"lpips_proxy", r_noise_off.lpips_proxy}, {"alignment", r_noise_off.mean_alignment}}}};

    std::string csv = csv_header();
    for (const auto& report : reports) csv += csv_row(report);
    write_text_file(dir + "/metrics.json", metrics_json(reports));
    write_text_file(dir + "/results.csv", csv);
    write_text_file(dir + "/ablations.json", summary.dump(2) + "\n");
    write_stage_manifest(dir, "ablate", cfg, {"metrics.json", "results.csv", "ablations.json"},
                         timer.seconds());
    std::printf("ablate: done in %.1fs\n", timer.seconds());
}

void run_report(const ExperimentConfig& cfg) {
    StageTimer timer;
    std::string root = resolve_output_root(cfg.output_dir);
    std::string dir = root + "/report";
    fs::create_directories(dir);

    std::vector<std::string> lines;
    auto collect = [&](const fs::path& csv_path) {
        std::ifstream in(csv_path);
        if (!in) return;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) lines.push_back(line);
    };
    for (const char* stage : {"attack", "baseline"}) {
        fs::path base = fs::path(root) / stage;
        if (!fs::is_directory(base)) continue;
        std::vector<fs::path> subdirs;
        for (const auto& entry : fs::directory_iterator(base))
            if (entry.is_directory()) subdirs.push_back(entry.path());
        std::sort(subdirs.begin(), subdirs.end());
        for (const auto& sub : subdirs) collect(sub / "results.csv");
    }
    collect(fs::path(root) / "ablate" / "results.csv");

    std::string merged = csv_header();
    for (const auto& line : lines)
        if (line.rfind("task,", 0) != 0) merged += line + "\n";
    write_text_file(dir + "/all_results.csv", merged);

    auto rows = parse_csv_rows(lines);
    std::vector<std::string> files{"all_results.csv"};

    // ASR and wall time per method, grouped by bundle.
    std::vector<std::string> bundles;
    for (const auto& r : rows)
        if ((r.task == "attack" || r.task == "baseline") &&
            std::find(bundles.begin(), bundles.end(), r.bundle) == bundles.end())
            bundles.push_back(r.bundle);
    std::sort(bundles.begin(), bundles.end());
    if (!bundles.empty()) {
        const std::vector<std::pair<std::string, std::array<std::uint8_t, 3>>> methods{
            {"recall", {214, 69, 65}},    {"text_only", {66, 114, 196}},
            {"image_only", {86, 166, 91}}, {"text_noise", {219, 158, 54}},
            {"text_image", {132, 94, 194}}};
        std::vector<Series> asr_series, time_series;
        for (const auto& [method, color] : methods) {
            Series sa{method, color, {}};
            Series st{method, color, {}};
            bool any = false;
            for (const auto& b : bundles) {
                double asr_v = 0.0, time_v = 0.0;
                for (const auto& r : rows)
                    if (r.bundle == b && r.method == method &&
                        (r.task == "attack" || r.task == "baseline")) {
                        asr_v = r.asr;
                        time_v = r.time_s;
                        any = true;
                    }
                sa.values.push_back(asr_v);
                st.values.push_back(time_v);
            }
            if (any) {
                asr_series.push_back(sa);
                time_series.push_back(st);
            }
        }
        if (!asr_series.empty()) {
            plot_bars(dir + "/asr_by_method.png", "ASR % BY METHOD", bundles, asr_series, 100.0);
            plot_bars(dir + "/time_by_method.png", "MEAN TIME S BY METHOD", bundles, time_series);
            files.push_back("asr_by_method.png");
            files.push_back("time_by_method.png");
        }
    }

    auto sweep_rows = [&](const std::string& prefix) {
        std::vector<std::pair<double, CsvRecord>> found;
        for (const auto& r : rows)
            if (r.task.rfind(prefix, 0) == 0)
                found.emplace_back(std::atof(r.task.substr(prefix.size()).c_str()), r);
        std::sort(found.begin(), found.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        return found;
    };

    auto eta = sweep_rows("ablation:eta=");
    if (!eta.empty()) {
        std::vector<double> xs;
        std::vector<std::string> labels;
        Series s{"asr", {214, 69, 65}, {}};
        for (std::size_t i = 0; i < eta.size(); ++i) {
            xs.push_back(static_cast<double>(i));
            labels.push_back(fmt_g(eta[i].first));
            s.values.push_back(eta[i].second.asr);
        }
        plot_lines(dir + "/ablation_eta.png", "ASR % VS STEP SIZE", xs, {s}, labels);
        files.push_back("ablation_eta.png");
    }

    auto lambda = sweep_rows("ablation:lambda=");
    if (!lambda.empty()) {
        std::vector<double> xs;
        std::vector<std::string> labels;
        Series s_asr{"asr", {214, 69, 65}, {}};
        Series s_align{"alignment", {66, 114, 196}, {}};
        for (std::size_t i = 0; i < lambda.size(); ++i) {
            xs.push_back(static_cast<double>(i));
            labels.push_back(fmt_g(lambda[i].first));
            s_asr.values.push_back(lambda[i].second.asr);
            s_align.values.push_back(lambda[i].second.alignment);
        }
        plot_lines(dir + "/ablation_lambda.png", "ASR AND ALIGNMENT VS BLEND", xs,
                   {s_asr, s_align}, labels);
        files.push_back("ablation_lambda.png");
    }

    json summary;
    summary["merged_rows"] = rows.size();
    summary["plots"] = files;
    write_text_file(dir + "/summary.json", summary.dump(2) + "\n");
    files.push_back("summary.json");
    write_stage_manifest(dir, "report", cfg, files, timer.seconds());
    std::printf("report: %zu rows merged -> %s\n", rows.size(), dir.c_str());
}

}  // namespace recall
