#include <doctest.h>

#include <cmath>
#include <set>

#include "recall/rng.hpp"

using namespace recall;

TEST_CASE("rng streams are deterministic per seed") {
    Rng a(42), b(42), c(43);
    bool same = true, differ = false;
    for (int i = 0; i < 100; ++i) {
        double va = a.uniform();
        if (va != b.uniform()) same = false;
        if (va != c.uniform()) differ = true;
    }
    CHECK(same);
    CHECK(differ);
}

TEST_CASE("uniform stays inside [0,1) and fills the range") {
    Rng rng(7);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 20000; ++i) {
        double v = rng.uniform();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("uniform_int is inclusive on both ends") {
    Rng rng(3);
    std::set<int> seen;
    for (int i = 0; i < 1000; ++i) seen.insert(rng.uniform_int(2, 5));
    CHECK(seen.count(2) == 1);
    CHECK(seen.count(5) == 1);
    CHECK(*seen.begin() >= 2);
    CHECK(*seen.rbegin() <= 5);
}

TEST_CASE("normal matches unit gaussian moments") {
    Rng rng(11);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0, sum4 = 0.0;
    for (int i = 0; i < n; ++i) {
        double v = rng.normal();
        sum += v;
        sum2 += v * v;
        sum4 += v * v * v * v;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    double kurt = sum4 / n / (var * var);
    CHECK(std::abs(mean) < 0.01);
    CHECK(var == doctest::Approx(1.0).epsilon(0.02));
    CHECK(kurt == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("derive_seed separates streams and is order sensitive") {
    std::uint64_t a = derive_seed(1, 2, 3);
    CHECK(a == derive_seed(1, 2, 3));
    CHECK(a != derive_seed(1, 3, 2));
    CHECK(a != derive_seed(2, 2, 3));
    CHECK(derive_seed(1, 2) == derive_seed(1, 2, 0));

    std::set<std::uint64_t> values;
    for (std::uint64_t i = 0; i < 1000; ++i) values.insert(derive_seed(5, 9, i));
    CHECK(values.size() == 1000);
}

TEST_CASE("mix_u64 is a bijection-ish scramble on small inputs") {
    std::set<std::uint64_t> out;
    for (std::uint64_t i = 0; i < 4096; ++i) out.insert(mix_u64(i));
    CHECK(out.size() == 4096);
}
