#include <cstdlib>
#include <doctest.h>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>

#include "recall/errors.hpp"
#include "recall/harness.hpp"
#include "recall/hash.hpp"

using namespace recall;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path p;
    TempDir(const char* tag) : p(fs::temp_directory_path() / tag) {
        fs::remove_all(p);
        fs::create_directories(p);
    }
    ~TempDir() { fs::remove_all(p); }
};

// Scoped env var override so tests cannot leak into each other.
struct EnvGuard {
    std::string key, old;
    bool had = false;
    EnvGuard(const char* k, const char* value) : key(k) {
        if (const char* prev = std::getenv(k)) {
            had = true;
            old = prev;
        }
        setenv(k, value, 1);
    }
    ~EnvGuard() {
        if (had)
            setenv(key.c_str(), old.c_str(), 1);
        else
            unsetenv(key.c_str());
    }
};

}  // namespace

TEST_CASE("parse_config applies defaults and overrides") {
    ExperimentConfig def = parse_config("{}");
    CHECK(def.erased == ShapeClass::circle);
    CHECK(def.data.n == 3000);
    CHECK(def.attack.prompt_count == 50);
    CHECK(def.schedule.T == 1000);

    ExperimentConfig c = parse_config(R"({
        "concept": "square",
        "master_seed": 9,
        "data": {"n": 100, "mix": {"square": 2.0, "circle": 1.0}},
        "attack": {"update_sign": "ascend", "bundles": ["base"]}
    })");
    CHECK(c.erased == ShapeClass::square);
    CHECK(c.master_seed == 9);
    CHECK(c.data.n == 100);
    CHECK(c.data.mix.at(ShapeClass::square) == 2.0);
    CHECK(c.attack.optimizer.update_sign == UpdateSign::ascend);
    CHECK(c.attack.bundles == std::vector<std::string>{"base"});
}

TEST_CASE("parse_config rejects malformed input") {
    CHECK_THROWS_AS(parse_config("not json"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"bogus": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"denoiser": {"snr": 1}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"denoiser": {"epochs": "ten"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"concept": "pentagon"})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"data": {"n": 0}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"base_eval_seeds": 0})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"attack": {"beta_momentum": 1.5}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"attack": {"update_sign": "sideways"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"attack": {"bundles": ["mystery"]}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"schedule": {"T": 0}})"), ConfigError);
}

TEST_CASE("config hash is stable, sensitive, and round trips through canonical json") {
    ExperimentConfig a = parse_config("{}");
    ExperimentConfig b = parse_config("{}");
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 64);

    ExperimentConfig c = parse_config(R"({"master_seed": 2})");
    CHECK(config_hash(a) != config_hash(c));

    ExperimentConfig rt = parse_config(config_canonical_json(c));
    CHECK(config_hash(rt) == config_hash(c));
}

TEST_CASE("attack jobs cycle the colors with distinct derived seeds") {
    ExperimentConfig cfg = parse_config(R"({"concept": "triangle"})");
    auto jobs = attack_jobs(cfg);
    REQUIRE(static_cast<int>(jobs.size()) == cfg.attack.prompt_count);

    std::set<std::uint64_t> seeds;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        CHECK(jobs[i].prompt_id == static_cast<int>(i));
        CHECK(prompt_shape(jobs[i].prompt) == ShapeClass::triangle);
        if (i >= 3) CHECK(jobs[i].prompt.text() == jobs[i - 3].prompt.text());
        if (i >= 1 && i < 3) CHECK(jobs[i].prompt.text() != jobs[i - 1].prompt.text());
        seeds.insert(jobs[i].seed);
    }
    CHECK(seeds.size() == jobs.size());

    auto again = attack_jobs(cfg);
    CHECK(again[7].seed == jobs[7].seed);
    cfg.master_seed = 999;
    CHECK(attack_jobs(cfg)[7].seed != jobs[7].seed);
}

TEST_CASE("relative output roots resolve under RECALL_LAB_HOME") {
    TempDir home("recall_test_home");
    EnvGuard guard("RECALL_LAB_HOME", home.p.c_str());
    CHECK(resolve_output_root("runs") == (home.p / "runs").string());
    CHECK(resolve_output_root("/abs/path") == "/abs/path");

    EnvGuard cleared("RECALL_LAB_HOME", "");
    CHECK(resolve_output_root("runs") == (fs::current_path() / "runs").string());
}

TEST_CASE("stage manifests record per-file hashes and the config hash") {
    TempDir dir("recall_test_manifest");
    std::string content = "hello stage\n";
    {
        std::ofstream out(dir.p / "f.txt", std::ios::binary);
        out << content;
    }
    ExperimentConfig cfg = parse_config("{}");
    write_stage_manifest(dir.p.string(), "train", cfg, {"f.txt"}, 1.5);

    std::ifstream in(dir.p / "manifest.json");
    REQUIRE(in.good());
    json m = json::parse(in);
    CHECK(m["stage"] == "train");
    CHECK(m["config_hash"] == config_hash(cfg));
    CHECK(m["wall_time_s"] == 1.5);
    REQUIRE(m["files"].size() == 1);
    CHECK(m["files"][0]["file"] == "f.txt");
    CHECK(m["files"][0]["sha256"] == sha256_hex(content));
}
