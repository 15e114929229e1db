#pragma once

#include <cstddef>
#include <vector>

#include "recall/rng.hpp"

namespace recall {

// Dense row-major [c,h,w] tensor of doubles. Doubles everywhere: the test
// suite checks analytic gradients against central differences at 1e-3
// tolerance and single precision leaves no headroom for that.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}

    int size() const { return c * h * w; }
    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    double& at(int ci, int y, int x) { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
    const double& at(int ci, int y, int x) const {
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }

    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

Tensor randn(int c, int h, int w, Rng& rng);

void fill(Tensor& t, double value);
// y += alpha * x
void axpy(double alpha, const Tensor& x, Tensor& y);
void scale(Tensor& t, double alpha);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);

double dot(const Tensor& a, const Tensor& b);
double l1_norm(const Tensor& t);
double sum_sq(const Tensor& t);
double mean(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);
void clamp_(Tensor& t, double lo, double hi);

}  // namespace recall
