#include "recall/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "recall/errors.hpp"

namespace recall {

Tensor randn(int c, int h, int w, Rng& rng) {
    Tensor t(c, h, w);
    for (double& x : t.v) x = rng.normal();
    return t;
}

void fill(Tensor& t, double value) { std::fill(t.v.begin(), t.v.end(), value); }

void axpy(double alpha, const Tensor& x, Tensor& y) {
    if (!x.same_shape(y)) throw NumericsError("axpy: shape mismatch");
    for (int i = 0; i < x.size(); ++i) y.v[i] += alpha * x.v[i];
}

void scale(Tensor& t, double alpha) {
    for (double& x : t.v) x *= alpha;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw NumericsError("add: shape mismatch");
    Tensor out = a;
    for (int i = 0; i < b.size(); ++i) out.v[i] += b.v[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw NumericsError("sub: shape mismatch");
    Tensor out = a;
    for (int i = 0; i < b.size(); ++i) out.v[i] -= b.v[i];
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw NumericsError("dot: shape mismatch");
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) s += a.v[i] * b.v[i];
    return s;
}

double l1_norm(const Tensor& t) {
    double s = 0.0;
    for (double x : t.v) s += std::abs(x);
    return s;
}

double sum_sq(const Tensor& t) {
    double s = 0.0;
    for (double x : t.v) s += x * x;
    return s;
}

double mean(const Tensor& t) {
    if (t.size() == 0) return 0.0;
    double s = 0.0;
    for (double x : t.v) s += x;
    return s / t.size();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw NumericsError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (int i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
    return m;
}

bool all_finite(const Tensor& t) {
    for (double x : t.v)
        if (!std::isfinite(x)) return false;
    return true;
}

void clamp_(Tensor& t, double lo, double hi) {
    for (double& x : t.v) x = std::clamp(x, lo, hi);
}

}  // namespace recall
