#include "recall/bundle.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "recall/errors.hpp"
#include "recall/hash.hpp"

namespace recall {

namespace fs = std::filesystem;
using nlohmann::json;

const char* bundle_kind_name(BundleKind k) {
    return k == BundleKind::base ? "base" : "unlearned";
}

const char* unlearn_method_name(UnlearnMethod m) {
    switch (m) {
        case UnlearnMethod::none: return "none";
        case UnlearnMethod::esd_finetune: return "esd_finetune";
        case UnlearnMethod::sld_guidance: return "sld_guidance";
    }
    throw ConfigError("unlearn_method_name: bad method");
}

BundleKind parse_bundle_kind(const std::string& s) {
    if (s == "base") return BundleKind::base;
    if (s == "unlearned") return BundleKind::unlearned;
    throw ConfigError("unknown bundle kind '" + s + "'");
}

UnlearnMethod parse_unlearn_method(const std::string& s) {
    if (s == "none") return UnlearnMethod::none;
    if (s == "esd_finetune") return UnlearnMethod::esd_finetune;
    if (s == "sld_guidance") return UnlearnMethod::sld_guidance;
    throw ConfigError("unknown unlearn method '" + s + "'");
}

namespace {

constexpr std::uint32_t kBlobMagic = 0x52434c42;  // "RCLB"

void write_blob(const std::string& path, const Vec& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("save_bundle: cannot write " + path);
    std::uint32_t magic = kBlobMagic;
    std::uint64_t n = w.size();
    out.write(reinterpret_cast<const char*>(&magic), sizeof(magic));
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!out) throw ConfigError("save_bundle: short write to " + path);
}

Vec read_blob(const std::string& path, std::size_t expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("load_bundle: cannot read " + path);
    std::uint32_t magic = 0;
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (magic != kBlobMagic) throw ConfigError("load_bundle: bad magic in " + path);
    if (n != expected)
        throw ConfigError("load_bundle: parameter count mismatch in " + path + " (got " +
                          std::to_string(n) + ", want " + std::to_string(expected) + ")");
    Vec w(n);
    in.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw ConfigError("load_bundle: short read from " + path);
    return w;
}

}  // namespace

void save_bundle(const std::string& dir, const ModelBundle& b) {
    fs::create_directories(dir);
    write_blob((fs::path(dir) / "codec.bin").string(), b.codec.w);
    write_blob((fs::path(dir) / "text_encoder.bin").string(), b.text.w);
    write_blob((fs::path(dir) / "denoiser.bin").string(), b.denoiser.w);

    json manifest;
    json components = json::array();
    auto comp = [&](const char* name, const char* file, std::size_t n_params) {
        components.push_back({{"component", name},
                              {"file", file},
                              {"sha256", sha256_file_hex((fs::path(dir) / file).string())},
                              {"n_params", n_params}});
    };
    comp("codec", "codec.bin", b.codec.w.size());
    comp("text_encoder", "text_encoder.bin", b.text.w.size());
    comp("denoiser", "denoiser.bin", b.denoiser.w.size());
    manifest["components"] = components;
    manifest["latent_shape"] = {kLatentChannels, kLatentSize, kLatentSize};
    manifest["vocab_hash"] = vocab_hash();
    manifest["train_seed"] = b.meta.train_seed;
    manifest["epochs"] = b.meta.epochs;
    manifest["kind"] = bundle_kind_name(b.meta.kind);
    manifest["method"] = unlearn_method_name(b.meta.method);
    if (b.meta.erased_concept)
        manifest["erased_concept"] = shape_name(*b.meta.erased_concept);
    if (b.meta.forgetting_rate) manifest["forgetting_rate"] = *b.meta.forgetting_rate;
    if (b.meta.preservation_score) manifest["preservation_score"] = *b.meta.preservation_score;
    if (b.meta.base_preservation_score)
        manifest["base_preservation_score"] = *b.meta.base_preservation_score;
    if (b.meta.preservation_pass) manifest["preservation_pass"] = *b.meta.preservation_pass;
    manifest["sld_safety_scale"] = b.meta.sld_safety_scale;
    manifest["schedule"] = {{"T", b.schedule.T},
                            {"beta_start", b.schedule.beta_start},
                            {"beta_end", b.schedule.beta_end},
                            {"ddim_steps", b.schedule.ddim_steps}};
    manifest["codec_norm"] = {{"mean", b.codec.lat_mean}, {"std", b.codec.lat_std}};

    std::ofstream out(fs::path(dir) / "manifest.json");
    out << manifest.dump(2) << "\n";
}

ModelBundle load_bundle(const std::string& dir) {
    fs::path p(dir);
    std::ifstream in(p / "manifest.json");
    if (!in) throw ConfigError("load_bundle: missing manifest.json in " + dir);
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("load_bundle: bad manifest.json: ") + e.what());
    }

    if (manifest.value("vocab_hash", "") != vocab_hash())
        throw ConfigError("load_bundle: vocabulary hash mismatch");

    auto sched = manifest.at("schedule");
    ModelBundle b;
    b.schedule = make_schedule(sched.at("T").get<int>(), sched.at("beta_start").get<double>(),
                               sched.at("beta_end").get<double>(), sched.at("ddim_steps").get<int>());
    b.codec = ImageCodec::create(0);
    b.text = TextEncoder::create(0);
    b.denoiser = ConditionalDenoiser::create(0, b.schedule.T);

    for (const auto& comp : manifest.at("components")) {
        std::string file = comp.at("file").get<std::string>();
        std::string want = comp.at("sha256").get<std::string>();
        std::string got = sha256_file_hex((p / file).string());
        if (got != want)
            throw ConfigError("load_bundle: checksum mismatch for " + file);
    }
    b.codec.w = read_blob((p / "codec.bin").string(), b.codec.w.size());
    b.text.w = read_blob((p / "text_encoder.bin").string(), b.text.w.size());
    b.denoiser.w = read_blob((p / "denoiser.bin").string(), b.denoiser.w.size());

    auto norm = manifest.at("codec_norm");
    for (int c = 0; c < kLatentChannels; ++c) {
        b.codec.lat_mean[c] = norm.at("mean")[c].get<double>();
        b.codec.lat_std[c] = norm.at("std")[c].get<double>();
    }

    b.meta.kind = parse_bundle_kind(manifest.at("kind").get<std::string>());
    b.meta.method = parse_unlearn_method(manifest.at("method").get<std::string>());
    if (manifest.contains("erased_concept"))
        b.meta.erased_concept = parse_shape(manifest.at("erased_concept").get<std::string>());
    b.meta.train_seed = manifest.at("train_seed").get<std::uint64_t>();
    b.meta.epochs = manifest.at("epochs").get<int>();
    if (manifest.contains("forgetting_rate"))
        b.meta.forgetting_rate = manifest.at("forgetting_rate").get<double>();
    if (manifest.contains("preservation_score"))
        b.meta.preservation_score = manifest.at("preservation_score").get<double>();
    if (manifest.contains("base_preservation_score"))
        b.meta.base_preservation_score = manifest.at("base_preservation_score").get<double>();
    if (manifest.contains("preservation_pass"))
        b.meta.preservation_pass = manifest.at("preservation_pass").get<bool>();
    b.meta.sld_safety_scale = manifest.value("sld_safety_scale", 0.0);
    return b;
}

}  // namespace recall
