#include <doctest.h>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "recall/bundle.hpp"
#include "recall/errors.hpp"
#include "recall/rng.hpp"

using namespace recall;
namespace fs = std::filesystem;

namespace {

ModelBundle make_test_bundle(std::uint64_t seed) {
    ModelBundle b;
    b.codec = ImageCodec::create(seed);
    b.text = TextEncoder::create(seed + 1);
    b.denoiser = ConditionalDenoiser::create(seed + 2);
    b.schedule = make_schedule();
    Rng rng(derive_seed(seed, 0xb0b0));
    for (double& x : b.codec.w) x = rng.normal();
    for (double& x : b.text.w) x = rng.normal();
    for (double& x : b.denoiser.w) x = rng.normal();
    for (int c = 0; c < kLatentChannels; ++c) {
        b.codec.lat_mean[c] = 0.1 * c;
        b.codec.lat_std[c] = 1.0 + 0.2 * c;
    }
    b.meta.kind = BundleKind::unlearned;
    b.meta.method = UnlearnMethod::esd_finetune;
    b.meta.erased_concept = ShapeClass::circle;
    b.meta.train_seed = 77;
    b.meta.epochs = 8;
    b.meta.forgetting_rate = 0.125;
    b.meta.preservation_score = 0.83;
    b.meta.base_preservation_score = 0.91;
    b.meta.preservation_pass = true;
    return b;
}

struct TempDir {
    fs::path p;
    TempDir(const char* tag) : p(fs::temp_directory_path() / tag) {
        fs::remove_all(p);
        fs::create_directories(p);
    }
    ~TempDir() { fs::remove_all(p); }
};

}  // namespace

TEST_CASE("bundle save/load round trip is bit exact") {
    TempDir dir("recall_test_bundle_rt");
    ModelBundle b = make_test_bundle(5);
    save_bundle(dir.p.string(), b);
    ModelBundle r = load_bundle(dir.p.string());

    CHECK(r.codec.w == b.codec.w);
    CHECK(r.text.w == b.text.w);
    CHECK(r.denoiser.w == b.denoiser.w);
    for (int c = 0; c < kLatentChannels; ++c) {
        CHECK(r.codec.lat_mean[c] == b.codec.lat_mean[c]);
        CHECK(r.codec.lat_std[c] == b.codec.lat_std[c]);
    }
    CHECK(r.schedule.T == b.schedule.T);
    CHECK(r.schedule.ddim_steps == b.schedule.ddim_steps);
    CHECK(r.schedule.alpha_bar == b.schedule.alpha_bar);

    CHECK(r.meta.kind == BundleKind::unlearned);
    CHECK(r.meta.method == UnlearnMethod::esd_finetune);
    REQUIRE(r.meta.erased_concept.has_value());
    CHECK(*r.meta.erased_concept == ShapeClass::circle);
    CHECK(r.meta.train_seed == 77);
    CHECK(r.meta.epochs == 8);
    REQUIRE(r.meta.forgetting_rate.has_value());
    CHECK(*r.meta.forgetting_rate == 0.125);
    REQUIRE(r.meta.preservation_pass.has_value());
    CHECK(*r.meta.preservation_pass == true);
}

TEST_CASE("base bundle round trips without optional metadata") {
    TempDir dir("recall_test_bundle_base");
    ModelBundle b;
    b.codec = ImageCodec::create(1);
    b.text = TextEncoder::create(2);
    b.denoiser = ConditionalDenoiser::create(3);
    b.schedule = make_schedule();
    save_bundle(dir.p.string(), b);
    ModelBundle r = load_bundle(dir.p.string());
    CHECK(r.meta.kind == BundleKind::base);
    CHECK(r.meta.method == UnlearnMethod::none);
    CHECK_FALSE(r.meta.erased_concept.has_value());
    CHECK_FALSE(r.meta.forgetting_rate.has_value());
    CHECK_FALSE(r.meta.preservation_pass.has_value());
}

TEST_CASE("load_bundle detects weight tampering") {
    TempDir dir("recall_test_bundle_tamper");
    ModelBundle b = make_test_bundle(6);
    save_bundle(dir.p.string(), b);

    // Flip one byte in the middle of the denoiser blob.
    fs::path blob = dir.p / "denoiser.bin";
    std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    char c;
    f.seekg(200);
    f.get(c);
    f.seekp(200);
    f.put(static_cast<char>(c ^ 0x40));
    f.close();

    CHECK_THROWS_AS(load_bundle(dir.p.string()), ConfigError);
}

TEST_CASE("load_bundle detects a stale vocabulary hash") {
    TempDir dir("recall_test_bundle_vocab");
    ModelBundle b = make_test_bundle(7);
    save_bundle(dir.p.string(), b);

    fs::path mpath = dir.p / "manifest.json";
    nlohmann::json manifest;
    {
        std::ifstream in(mpath);
        in >> manifest;
    }
    manifest["vocab_hash"] = "0000000000000000";
    {
        std::ofstream out(mpath);
        out << manifest.dump(2) << "\n";
    }
    CHECK_THROWS_AS(load_bundle(dir.p.string()), ConfigError);
}

TEST_CASE("load_bundle requires all files") {
    TempDir dir("recall_test_bundle_missing");
    CHECK_THROWS_AS(load_bundle(dir.p.string()), ConfigError);

    ModelBundle b = make_test_bundle(8);
    save_bundle(dir.p.string(), b);
    fs::remove(dir.p / "codec.bin");
    CHECK_THROWS_AS(load_bundle(dir.p.string()), ConfigError);
}

TEST_CASE("name round trips for kinds and methods") {
    CHECK(parse_bundle_kind("base") == BundleKind::base);
    CHECK(parse_bundle_kind("unlearned") == BundleKind::unlearned);
    CHECK_THROWS_AS(parse_bundle_kind("extra"), ConfigError);

    for (auto m : {UnlearnMethod::none, UnlearnMethod::esd_finetune, UnlearnMethod::sld_guidance})
        CHECK(parse_unlearn_method(unlearn_method_name(m)) == m);
    CHECK_THROWS_AS(parse_unlearn_method("gradient_ascent"), ConfigError);
}
