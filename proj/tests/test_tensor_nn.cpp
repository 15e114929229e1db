#include <doctest.h>

#include <cmath>

#include "recall/errors.hpp"
#include "recall/nn.hpp"
#include "recall/rng.hpp"
#include "recall/tensor.hpp"

using namespace recall;

namespace {

// Central finite differences against an arbitrary scalar loss. The layers
// are smooth (silu, not relu), so agreement should be near machine level;
// 1e-6 leaves room for cancellation in the loss sums.
constexpr double kFdEps = 1e-5;
constexpr double kFdTol = 1e-6;

double loss_of(const Tensor& y) {
    // sum of sin weights makes the loss sensitive to every element
    double l = 0.0;
    for (std::size_t i = 0; i < y.v.size(); ++i) l += y.v[i] * std::sin(0.7 * (i + 1));
    return l;
}

Tensor dloss_of(const Tensor& y) {
    Tensor d(y.c, y.h, y.w);
    for (std::size_t i = 0; i < y.v.size(); ++i) d.v[i] = std::sin(0.7 * (i + 1));
    return d;
}

}  // namespace

TEST_CASE("tensor basics and shape checks") {
    Tensor a(2, 3, 4);
    CHECK(a.v.size() == 24);
    fill(a, 2.0);
    CHECK(mean(a) == doctest::Approx(2.0));
    a.at(1, 2, 3) = -5.0;
    Tensor zero(2, 3, 4);
    CHECK(max_abs_diff(a, zero) == doctest::Approx(5.0));
    CHECK(all_finite(a));
    a.at(0, 0, 0) = std::nan("");
    CHECK_FALSE(all_finite(a));

    Tensor b(2, 3, 4), c(1, 3, 4);
    fill(b, 1.0);
    CHECK_THROWS_AS(add(b, c), NumericsError);
    fill(a, 2.0);
    Tensor s = add(a, b);
    CHECK(s.at(1, 0, 0) == doctest::Approx(3.0));
    Tensor diff = sub(a, b);
    CHECK(diff.at(0, 1, 1) == doctest::Approx(1.0));
    CHECK(dot(a, b) == doctest::Approx(48.0));

    Tensor d(1, 2, 2);
    d.v = {1.0, -2.0, 3.0, -4.0};
    CHECK(l1_norm(d) == doctest::Approx(10.0));
    CHECK(sum_sq(d) == doctest::Approx(30.0));
    clamp_(d, -2.5, 2.5);
    CHECK(d.v[3] == doctest::Approx(-2.5));
}

TEST_CASE("axpy and scale match manual arithmetic") {
    Tensor x(1, 2, 2), y(1, 2, 2);
    x.v = {1, 2, 3, 4};
    y.v = {10, 20, 30, 40};
    axpy(0.5, x, y);
    CHECK(y.v[2] == doctest::Approx(31.5));
    scale(y, 2.0);
    CHECK(y.v[0] == doctest::Approx(21.0));
}

TEST_CASE("conv2d forward matches direct convolution oracle") {
    // independent scalar implementation with explicit zero padding semantics
    for (auto [ic, oc, hw, stride] : {std::array<int, 4>{3, 5, 8, 1},
                                      std::array<int, 4>{2, 4, 8, 2},
                                      std::array<int, 4>{4, 3, 16, 1},
                                      std::array<int, 4>{3, 6, 7, 1}}) {
        ParamAlloc alloc;
        Conv2d conv = Conv2d::make(alloc, ic, oc, 3, stride, 1);
        Vec w(alloc.total);
        Rng rng(99 + hw);
        conv.init_kaiming(w.data(), rng);
        Tensor x = randn(ic, hw, hw, rng);

        Tensor y = conv.forward(w.data(), x);
        int oh = conv.out_dim(hw);
        REQUIRE(y.c == oc);
        REQUIRE(y.h == oh);

        double worst = 0.0;
        for (int o = 0; o < oc; ++o)
            for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < oh; ++xx) {
                    double acc = w[conv.b_off + o];
                    for (int i = 0; i < ic; ++i)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                int sy = yy * stride + ky - 1;
                                int sx = xx * stride + kx - 1;
                                if (sy < 0 || sy >= hw || sx < 0 || sx >= hw) continue;
                                acc += w[conv.w_off + ((static_cast<std::size_t>(o) * ic + i) * 9) +
                                         ky * 3 + kx] *
                                       x.at(i, sy, sx);
                            }
                    worst = std::max(worst, std::abs(acc - y.at(o, yy, xx)));
                }
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("conv2d gradients agree with finite differences") {
    for (auto [ic, oc, hw, stride] : {std::array<int, 4>{3, 4, 8, 1},
                                      std::array<int, 4>{2, 3, 8, 2},
                                      std::array<int, 4>{2, 2, 16, 1},
                                      std::array<int, 4>{3, 2, 32, 1}}) {
        ParamAlloc alloc;
        Conv2d conv = Conv2d::make(alloc, ic, oc, 3, stride, 1);
        Vec w(alloc.total);
        Rng rng(5 + hw + stride);
        conv.init_kaiming(w.data(), rng);
        Tensor x = randn(ic, hw, hw, rng);

        Tensor y = conv.forward(w.data(), x);
        Vec g(alloc.total, 0.0);
        Tensor dx = conv.backward(w.data(), x, dloss_of(y), g.data(), true);

        double worst = 0.0;
        for (std::size_t i = 0; i < alloc.total; i += std::max<std::size_t>(1, alloc.total / 25)) {
            double keep = w[i];
            w[i] = keep + kFdEps;
            double lp = loss_of(conv.forward(w.data(), x));
            w[i] = keep - kFdEps;
            double lm = loss_of(conv.forward(w.data(), x));
            w[i] = keep;
            worst = std::max(worst, std::abs((lp - lm) / (2 * kFdEps) - g[i]));
        }
        CHECK(worst < kFdTol);

        worst = 0.0;
        for (std::size_t i = 0; i < x.v.size(); i += std::max<std::size_t>(1, x.v.size() / 25)) {
            double keep = x.v[i];
            x.v[i] = keep + kFdEps;
            double lp = loss_of(conv.forward(w.data(), x));
            x.v[i] = keep - kFdEps;
            double lm = loss_of(conv.forward(w.data(), x));
            x.v[i] = keep;
            worst = std::max(worst, std::abs((lp - lm) / (2 * kFdEps) - dx.v[i]));
        }
        CHECK(worst < kFdTol);
    }
}

TEST_CASE("linear gradients agree with finite differences") {
    ParamAlloc alloc;
    Linear lin = Linear::make(alloc, 7, 5, true);
    Linear lin_nb = Linear::make(alloc, 7, 5, false);
    Vec w(alloc.total);
    Rng rng(17);
    lin.init_kaiming(w.data(), rng);
    lin_nb.init_kaiming(w.data(), rng);

    Vec x(7), y(5), dy(5);
    for (int i = 0; i < 7; ++i) x[i] = rng.normal();
    for (int i = 0; i < 5; ++i) dy[i] = std::sin(0.7 * (i + 1));

    for (const Linear& l : {lin, lin_nb}) {
        Vec g(alloc.total, 0.0), dx(7, 0.0);
        l.forward(w.data(), x.data(), y.data());
        l.backward(w.data(), x.data(), dy.data(), g.data(), dx.data());

        auto loss = [&]() {
            Vec out(5);
            l.forward(w.data(), x.data(), out.data());
            double s = 0.0;
            for (int i = 0; i < 5; ++i) s += out[i] * dy[i];
            return s;
        };
        double worst = 0.0;
        for (std::size_t i = 0; i < l.param_count(); ++i) {
            std::size_t idx = l.w_off + i;
            if (l.has_bias && i >= static_cast<std::size_t>(l.out) * l.in)
                idx = l.b_off + (i - static_cast<std::size_t>(l.out) * l.in);
            double keep = w[idx];
            w[idx] = keep + kFdEps;
            double lp = loss();
            w[idx] = keep - kFdEps;
            double lm = loss();
            w[idx] = keep;
            worst = std::max(worst, std::abs((lp - lm) / (2 * kFdEps) - g[idx]));
        }
        for (int i = 0; i < 7; ++i) {
            double keep = x[i];
            x[i] = keep + kFdEps;
            double lp = loss();
            x[i] = keep - kFdEps;
            double lm = loss();
            x[i] = keep;
            worst = std::max(worst, std::abs((lp - lm) / (2 * kFdEps) - dx[i]));
        }
        CHECK(worst < kFdTol);
    }
}

TEST_CASE("activation and pooling gradients agree with finite differences") {
    Rng rng(23);
    Tensor x = randn(2, 6, 6, rng);

    SUBCASE("silu") {
        Tensor y = silu_forward(x);
        Tensor dx = silu_backward(x, dloss_of(y));
        double worst = 0.0;
        for (std::size_t i = 0; i < x.v.size(); ++i) {
            double keep = x.v[i];
            x.v[i] = keep + kFdEps;
            double lp = loss_of(silu_forward(x));
            x.v[i] = keep - kFdEps;
            double lm = loss_of(silu_forward(x));
            x.v[i] = keep;
            worst = std::max(worst, std::abs((lp - lm) / (2 * kFdEps) - dx.v[i]));
        }
        CHECK(worst < kFdTol);
    }

    SUBCASE("sigmoid") {
        Tensor y = sigmoid_forward(x);
        Tensor dx = sigmoid_backward(y, dloss_of(y));
        double worst = 0.0;
        for (std::size_t i = 0; i < x.v.size(); ++i) {
            double keep = x.v[i];
            x.v[i] = keep + kFdEps;
            double lp = loss_of(sigmoid_forward(x));
            x.v[i] = keep - kFdEps;
            double lm = loss_of(sigmoid_forward(x));
            x.v[i] = keep;
            worst = std::max(worst, std::abs((lp - lm) / (2 * kFdEps) - dx.v[i]));
        }
        CHECK(worst < kFdTol);
    }

    SUBCASE("avgpool2 and upsample2 are exact linear adjoints") {
        Tensor y = avgpool2_forward(x);
        CHECK(y.h == 3);
        CHECK(y.at(0, 0, 0) ==
              doctest::Approx((x.at(0, 0, 0) + x.at(0, 0, 1) + x.at(0, 1, 0) + x.at(0, 1, 1)) / 4));
        Tensor dy = dloss_of(y);
        Tensor dx = avgpool2_backward(dy, 6, 6);
        // adjoint identity <Ax, dy> == <x, A^T dy>
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < y.v.size(); ++i) lhs += y.v[i] * dy.v[i];
        for (std::size_t i = 0; i < x.v.size(); ++i) rhs += x.v[i] * dx.v[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

        Tensor u = upsample2_forward(y);
        CHECK(u.h == 6);
        CHECK(u.at(1, 4, 5) == doctest::Approx(y.at(1, 2, 2)));
        Tensor du = dloss_of(u);
        Tensor dyu = upsample2_backward(du);
        lhs = rhs = 0.0;
        for (std::size_t i = 0; i < u.v.size(); ++i) lhs += u.v[i] * du.v[i];
        for (std::size_t i = 0; i < y.v.size(); ++i) rhs += y.v[i] * dyu.v[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }

    SUBCASE("gap") {
        Vec y = gap_forward(x);
        CHECK(y.size() == 2);
        double mean0 = 0.0;
        for (int i = 0; i < 36; ++i) mean0 += x.v[i];
        CHECK(y[0] == doctest::Approx(mean0 / 36));
        Vec dy{0.3, -0.9};
        Tensor dx = gap_backward(dy, 2, 6, 6);
        CHECK(dx.at(0, 3, 3) == doctest::Approx(0.3 / 36));
        CHECK(dx.at(1, 0, 0) == doctest::Approx(-0.9 / 36));
    }
}

TEST_CASE("sinusoidal embedding layout") {
    Vec e = sinusoidal_embedding(0, 64);
    REQUIRE(e.size() == 64);
    for (int i = 0; i < 32; ++i) CHECK(e[i] == doctest::Approx(0.0));      // sin half
    for (int i = 32; i < 64; ++i) CHECK(e[i] == doctest::Approx(1.0));     // cos half
    Vec e1 = sinusoidal_embedding(1, 64);
    CHECK(e1[0] == doctest::Approx(std::sin(1.0)));
    CHECK(e1[32] == doctest::Approx(std::cos(1.0)));
    // distinct timesteps embed differently
    Vec e2 = sinusoidal_embedding(500, 64);
    double diff = 0.0;
    for (int i = 0; i < 64; ++i) diff += std::abs(e1[i] - e2[i]);
    CHECK(diff > 1.0);
}

TEST_CASE("adam reproduces a hand computed first step and zeroes grads") {
    Vec w{1.0, -2.0}, g{0.5, -0.25};
    Adam opt(2, 1e-2);
    opt.step(w, g);
    // first step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
    CHECK(w[0] == doctest::Approx(1.0 - 1e-2 * 0.5 / (0.5 + 1e-8)).epsilon(1e-10));
    CHECK(w[1] == doctest::Approx(-2.0 + 1e-2 * 0.25 / (0.25 + 1e-8)).epsilon(1e-10));
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);

    // determinism: same sequence of grads, same weights
    Vec w1{0.3, 0.4}, w2{0.3, 0.4};
    Adam o1(2, 3e-3), o2(2, 3e-3);
    for (int i = 0; i < 5; ++i) {
        Vec g1{0.1 * i, -0.2}, g2{0.1 * i, -0.2};
        o1.step(w1, g1);
        o2.step(w2, g2);
    }
    CHECK(w1[0] == w2[0]);
    CHECK(w1[1] == w2[1]);
}

TEST_CASE("softmax cross entropy gradient and label smoothing") {
    Vec logits{0.5, -1.0, 2.0, 0.0};
    Vec d(4);
    double l = softmax_cross_entropy(logits, 2, &d, 0.0);
    Vec p = softmax(logits);
    CHECK(l == doctest::Approx(-std::log(p[2])));
    for (int i = 0; i < 4; ++i)
        CHECK(d[i] == doctest::Approx(p[i] - (i == 2 ? 1.0 : 0.0)).epsilon(1e-12));

    // smoothing redistributes the target mass
    Vec ds(4);
    double ls = softmax_cross_entropy(logits, 2, &ds, 0.2);
    CHECK(ls > 0.0);
    double off = 0.2 / 4;
    CHECK(ds[0] == doctest::Approx(p[0] - off).epsilon(1e-12));
    CHECK(ds[2] == doctest::Approx(p[2] - (1.0 - 0.2 + off)).epsilon(1e-12));

    double s = 0.0;
    for (double v : p) s += v;
    CHECK(s == doctest::Approx(1.0));
}

TEST_CASE("cosine similarity conventions") {
    Vec a{1.0, 0.0}, b{0.0, 2.0}, c{3.0, 0.0}, z{0.0, 0.0};
    CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
    CHECK(cosine_similarity(a, c) == doctest::Approx(1.0));
    CHECK(cosine_similarity(a, z) == 0.0);
}
