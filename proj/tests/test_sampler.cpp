#include <cmath>
#include <doctest.h>

#include "recall/bundle.hpp"
#include "recall/errors.hpp"
#include "recall/rng.hpp"
#include "recall/sampler.hpp"
#include "test_support.hpp"

using namespace recall;
using testsupport::scrambled_denoiser;
using testsupport::untrained_bundle;

namespace {

TextEmbedding random_embedding(std::uint64_t seed) {
    Rng rng(seed);
    TextEmbedding h;
    for (int i = 0; i < kTextEmbedDim; ++i) h.v[i] = 0.4 * rng.normal();
    return h;
}

}  // namespace

TEST_CASE("ddim_update inverts add_noise when the denoiser is exact") {
    NoiseSchedule sched = make_schedule();
    Rng rng(31);
    Latent z = randn_latent(rng);
    Latent eps = randn_latent(rng);

    for (auto [t, t_prev] : {std::pair{999, 979}, {499, 479}, {39, 19}, {19, -1}}) {
        Latent z_t = add_noise(sched, z, t, eps);
        Latent out = ddim_update(sched, z_t, t, t_prev, eps);
        Latent expect = add_noise_with_alpha_bar(sched.alpha_bar_at(t_prev), z, eps);
        CHECK(max_abs_diff(out.val, expect.val) < 1e-10);
    }
}

TEST_CASE("terminal ddim_update recovers the clean latent") {
    NoiseSchedule sched = make_schedule();
    Rng rng(32);
    Latent z = randn_latent(rng);
    Latent eps = randn_latent(rng);
    Latent z_t = add_noise(sched, z, 19, eps);
    Latent out = ddim_update(sched, z_t, 19, -1, eps);
    CHECK(max_abs_diff(out.val, z.val) < 1e-12);
}

TEST_CASE("ddim_update rejects non-decreasing timesteps") {
    NoiseSchedule sched = make_schedule();
    Rng rng(33);
    Latent z = randn_latent(rng);
    CHECK_THROWS_AS(ddim_update(sched, z, 19, 19, z), ConfigError);
    CHECK_THROWS_AS(ddim_update(sched, z, 19, 39, z), ConfigError);
}

TEST_CASE("guided_epsilon guidance identities") {
    ConditionalDenoiser d = scrambled_denoiser(41);
    NoiseSchedule sched = make_schedule();
    Rng rng(42);
    Latent z_t = randn_latent(rng);
    Latent cond = randn_latent(rng);
    TextEmbedding h = random_embedding(43);
    const int t = 499;

    Latent eps_c = predict_noise(d, z_t, t, h, &cond);
    Latent eps_u = predict_noise(d, z_t, t, null_text_embedding(), nullptr);
    REQUIRE(max_abs_diff(eps_c.val, eps_u.val) > 0.0);

    SUBCASE("guidance 1 reproduces the conditional estimate") {
        Latent g1 = guided_epsilon(d, z_t, t, h, &cond, 1.0);
        CHECK(max_abs_diff(g1.val, eps_c.val) == 0.0);
    }
    SUBCASE("guidance 0 reproduces the unconditional estimate") {
        Latent g0 = guided_epsilon(d, z_t, t, h, &cond, 0.0);
        CHECK(max_abs_diff(g0.val, eps_u.val) == 0.0);
    }
    SUBCASE("general guidance matches the affine formula") {
        double g = 7.0;
        Latent out = guided_epsilon(d, z_t, t, h, &cond, g);
        double worst = 0.0;
        for (int i = 0; i < out.val.size(); ++i) {
            double expect = eps_u.val.v[i] + g * (eps_c.val.v[i] - eps_u.val.v[i]);
            worst = std::max(worst, std::abs(out.val.v[i] - expect));
        }
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("safety steering subtracts the concept direction") {
    ConditionalDenoiser d = scrambled_denoiser(51);
    Rng rng(52);
    Latent z_t = randn_latent(rng);
    TextEmbedding h = random_embedding(53);
    SafetyGuidance safety;
    safety.concept_embedding = random_embedding(54);
    safety.scale = 2.0;
    const int t = 299;
    const double g = 7.0;

    Latent eps_c = predict_noise(d, z_t, t, h, nullptr);
    Latent eps_u = predict_noise(d, z_t, t, null_text_embedding(), nullptr);
    Latent eps_s = predict_noise(d, z_t, t, safety.concept_embedding, nullptr);

    Latent out = guided_epsilon(d, z_t, t, h, nullptr, g, &safety);
    double worst = 0.0;
    for (int i = 0; i < out.val.size(); ++i) {
        double guided = eps_u.val.v[i] + g * (eps_c.val.v[i] - eps_u.val.v[i]);
        double expect = guided - safety.scale * (eps_s.val.v[i] - eps_u.val.v[i]);
        worst = std::max(worst, std::abs(out.val.v[i] - expect));
    }
    CHECK(worst < 1e-12);

    SUBCASE("scale zero changes nothing") {
        safety.scale = 0.0;
        Latent plain = guided_epsilon(d, z_t, t, h, nullptr, g);
        Latent with = guided_epsilon(d, z_t, t, h, nullptr, g, &safety);
        CHECK(max_abs_diff(plain.val, with.val) == 0.0);
    }
}

TEST_CASE("ddim_step enforces the sampling grid") {
    NoiseSchedule sched = make_schedule();
    ConditionalDenoiser d = scrambled_denoiser(61);
    Rng rng(62);
    Latent z_t = randn_latent(rng);
    TextEmbedding h = random_embedding(63);

    CHECK_THROWS_AS(ddim_step(sched, d, z_t, 998, 979, h, nullptr, 1.0), ConfigError);
    CHECK_THROWS_AS(ddim_step(sched, d, z_t, 999, 978, h, nullptr, 1.0), ConfigError);
    CHECK_THROWS_AS(ddim_step(sched, d, z_t, 19, 19, h, nullptr, 1.0), ConfigError);
    CHECK_NOTHROW(ddim_step(sched, d, z_t, 999, 979, h, nullptr, 1.0));
    CHECK_NOTHROW(ddim_step(sched, d, z_t, 19, -1, h, nullptr, 1.0));
}

TEST_CASE("ddim_step is deterministic") {
    NoiseSchedule sched = make_schedule();
    ConditionalDenoiser d = scrambled_denoiser(71);
    Rng rng(72);
    Latent z_t = randn_latent(rng);
    Latent cond = randn_latent(rng);
    TextEmbedding h = random_embedding(73);

    Latent a = ddim_step(sched, d, z_t, 499, 479, h, &cond, 7.0);
    Latent b = ddim_step(sched, d, z_t, 499, 479, h, &cond, 7.0);
    CHECK(max_abs_diff(a.val, b.val) == 0.0);
}

TEST_CASE("generate validates init_strength") {
    ModelBundle b = untrained_bundle();
    TextEmbedding h = random_embedding(81);
    CHECK_THROWS_AS(
        generate_with_embedding(b, h, nullptr, 7.0, -0.1, nullptr, 1), ConfigError);
    CHECK_THROWS_AS(
        generate_with_embedding(b, h, nullptr, 7.0, 1.2, nullptr, 1), ConfigError);
    CHECK_THROWS_AS(
        generate_with_embedding(b, h, nullptr, 7.0, 0.5, nullptr, 1), ConfigError);
}

TEST_CASE("tiny init_strength degenerates to codec round trip") {
    ModelBundle b = untrained_bundle();
    Image x = reference_image_for(ShapeClass::square, 82);
    Latent zx = b.codec.encode(x);
    // 0.005 * 50 steps rounds to zero denoising steps.
    Image out = generate_with_embedding(b, null_text_embedding(), nullptr, 7.0, 0.005, &zx, 9);
    Image direct = b.codec.decode(zx);
    CHECK(max_abs_diff(out.pix, direct.pix) == 0.0);
}

TEST_CASE("generation is a pure function of bundle and request") {
    ModelBundle b = untrained_bundle();
    GenerationRequest req;
    req.prompt = make_prompt(ShapeClass::circle, ColorName::red);
    req.guidance_scale = 7.0;
    req.seed = 1234;

    Image i1 = generate(b, req);
    Image i2 = generate(b, req);
    CHECK(max_abs_diff(i1.pix, i2.pix) == 0.0);

    req.seed = 1235;
    Image i3 = generate(b, req);
    CHECK(max_abs_diff(i1.pix, i3.pix) > 0.0);
}
