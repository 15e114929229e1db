#include <doctest.h>

#include <cmath>

#include "recall/errors.hpp"
#include "recall/rng.hpp"
#include "recall/schedule.hpp"

using namespace recall;

TEST_CASE("schedule matches an independent long-double cumulative product") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 2e-2, 50);
    REQUIRE(s.T == 1000);
    REQUIRE(s.betas.size() == 1000);
    REQUIRE(s.alpha_bar.size() == 1000);

    long double acc = 1.0L;
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        long double beta = 1e-4L + (2e-2L - 1e-4L) * t / 999.0L;
        CHECK(s.betas[t] == doctest::Approx(static_cast<double>(beta)).epsilon(1e-12));
        acc *= (1.0L - beta);
        worst = std::max(worst, std::abs(static_cast<double>(acc) - s.alpha_bar[t]));
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("schedule endpoint invariants") {
    NoiseSchedule s = make_schedule();
    CHECK(s.alpha_bar.front() == doctest::Approx(1.0).epsilon(1e-2));
    CHECK(s.alpha_bar.back() < 0.05);
    for (int t = 1; t < s.T; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    CHECK(s.alpha_bar_at(-1) == 1.0);
    CHECK(s.alpha_bar_at(0) == s.alpha_bar[0]);
    CHECK_THROWS_AS(s.alpha_bar_at(1000), ConfigError);
    CHECK_THROWS_AS(s.alpha_bar_at(-2), ConfigError);
}

TEST_CASE("ddim grid descends from T-1 in even strides") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 2e-2, 50);
    REQUIRE(s.ddim_timesteps.size() == 50);
    CHECK(s.ddim_timesteps.front() == 999);
    CHECK(s.ddim_timesteps.back() == 19);
    for (std::size_t i = 1; i < s.ddim_timesteps.size(); ++i)
        CHECK(s.ddim_timesteps[i - 1] - s.ddim_timesteps[i] == 20);
    CHECK(s.on_ddim_grid(999));
    CHECK(s.on_ddim_grid(19));
    CHECK_FALSE(s.on_ddim_grid(0));
    CHECK(s.ddim_index_of(999) == 0);
    CHECK(s.ddim_index_of(19) == 49);

    NoiseSchedule tiny = make_schedule(100, 1e-4, 2e-2, 10);
    CHECK(tiny.ddim_timesteps.front() == 99);
    CHECK(tiny.ddim_timesteps.back() == 9);
}

TEST_CASE("make_schedule rejects bad parameters") {
    CHECK_THROWS_AS(make_schedule(1, 1e-4, 2e-2, 1), ConfigError);
    CHECK_THROWS_AS(make_schedule(1000, 0.0, 2e-2, 50), ConfigError);
    CHECK_THROWS_AS(make_schedule(1000, 2e-2, 1e-4, 50), ConfigError);
    CHECK_THROWS_AS(make_schedule(1000, 1e-4, 1.0, 50), ConfigError);
    CHECK_THROWS_AS(make_schedule(1000, 1e-4, 2e-2, 0), ConfigError);
    CHECK_THROWS_AS(make_schedule(1000, 1e-4, 2e-2, 1001), ConfigError);
    CHECK_THROWS_AS(make_schedule(1000, 1e-4, 2e-2, 33), ConfigError);  // must divide T
}

TEST_CASE("add_noise matches the closed-form mean and variance") {
    // z_t = sqrt(ab) z + sqrt(1 - ab) eps, so per element the sample mean is
    // sqrt(ab) z and the variance is 1 - ab. The mean tolerance is 5% of the
    // characteristic scale, since the target itself shrinks toward zero at
    // high t while the sampling error stays ~1/sqrt(n).
    NoiseSchedule s = make_schedule();
    Rng rng(31);
    Latent z = make_latent();
    fill(z.val, 0.8);

    for (int t : {100, 500, 900}) {
        const int n = 10000;
        double ab = s.alpha_bar[t];
        double sum = 0.0, sum2 = 0.0;
        int count = 0;
        while (count < n) {
            Latent eps = randn_latent(rng);
            Latent zt = add_noise(s, z, eps, t);
            for (double v : zt.val.v) {
                sum += v;
                sum2 += v * v;
                ++count;
            }
        }
        double mean_v = sum / count;
        double var = sum2 / count - mean_v * mean_v;
        double target_mean = std::sqrt(ab) * 0.8;
        CHECK(std::abs(mean_v - target_mean) < 0.05 * (std::abs(target_mean) + 1.0));
        CHECK(var == doctest::Approx(1.0 - ab).epsilon(0.05));
    }
}

TEST_CASE("add_noise_with_alpha_bar handles the terminal case exactly") {
    Rng rng(5);
    Latent z = randn_latent(rng);
    Latent eps = randn_latent(rng);
    Latent zt = add_noise_with_alpha_bar(z, eps, 1.0);
    CHECK(max_abs_diff(zt.val, z.val) == 0.0);  // bitwise: sqrt(1)=1, sqrt(0)=0
    Latent zn = add_noise_with_alpha_bar(z, eps, 0.0);
    CHECK(max_abs_diff(zn.val, eps.val) == 0.0);
    CHECK_THROWS_AS(add_noise_with_alpha_bar(z, eps, -0.1), ConfigError);
    CHECK_THROWS_AS(add_noise_with_alpha_bar(z, eps, 1.1), ConfigError);

    NoiseSchedule s = make_schedule();
    CHECK_THROWS_AS(add_noise(s, z, eps, -1), ConfigError);
    CHECK_THROWS_AS(add_noise(s, z, eps, 1000), ConfigError);
}
