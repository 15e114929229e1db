#pragma once

#include <cstddef>
#include <vector>

#include "recall/tensor.hpp"

namespace recall {

// All models keep their parameters in one flat std::vector<double>; layers
// carry offsets into it. Gradients live in a parallel flat vector. Backward
// passes are hand written; every layer gets a finite-difference test.

struct ParamAlloc {
    std::size_t total = 0;
    std::size_t take(std::size_t n) {
        std::size_t off = total;
        total += n;
        return off;
    }
};

using Vec = std::vector<double>;

struct Conv2d {
    int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
    std::size_t w_off = 0, b_off = 0;

    static Conv2d make(ParamAlloc& a, int in_c, int out_c, int k, int stride, int pad);
    std::size_t param_count() const {
        return static_cast<std::size_t>(out_c) * in_c * k * k + out_c;
    }
    int out_dim(int in_dim) const { return (in_dim + 2 * pad - k) / stride + 1; }

    void init_kaiming(double* w, Rng& rng) const;
    void init_zero(double* w) const;

    Tensor forward(const double* w, const Tensor& x) const;
    // Accumulates parameter gradients into g (skipped when g is null) and
    // returns dL/dx (empty tensor when want_dx is false).
    Tensor backward(const double* w, const Tensor& x, const Tensor& dy, double* g,
                    bool want_dx) const;
};

struct Linear {
    int in = 0, out = 0;
    bool has_bias = true;
    std::size_t w_off = 0, b_off = 0;

    static Linear make(ParamAlloc& a, int in, int out, bool bias = true);
    std::size_t param_count() const {
        return static_cast<std::size_t>(out) * in + (has_bias ? out : 0);
    }
    void init_kaiming(double* w, Rng& rng) const;
    void init_zero(double* w) const;

    void forward(const double* w, const double* x, double* y) const;
    // dx may be null when the input gradient is not needed.
    void backward(const double* w, const double* x, const double* dy, double* g,
                  double* dx) const;
};

// x * sigmoid(x). Smooth, so finite-difference gradient checks are clean.
double silu(double x);
double silu_grad(double x);
Tensor silu_forward(const Tensor& x);
Tensor silu_backward(const Tensor& x_pre, const Tensor& dy);
void silu_forward_vec(const double* x, double* y, int n);
void silu_backward_vec(const double* x_pre, const double* dy, double* dx, int n);

double sigmoid(double x);
Tensor sigmoid_forward(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y_post, const Tensor& dy);  // takes outputs

Tensor avgpool2_forward(const Tensor& x);
Tensor avgpool2_backward(const Tensor& dy, int in_h, int in_w);
Vec gap_forward(const Tensor& x);                      // global average pool
Tensor gap_backward(const Vec& dy, int c, int h, int w);
Tensor upsample2_forward(const Tensor& x);             // nearest neighbor
Tensor upsample2_backward(const Tensor& dy);

// Transformer-style sinusoidal embedding of an integer timestep.
Vec sinusoidal_embedding(int t, int dim);

struct Adam {
    double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    Vec m, v;
    long t = 0;
    Adam(std::size_t n, double lr_) : lr(lr_), m(n, 0.0), v(n, 0.0) {}
    // Applies the update and zeroes g.
    void step(Vec& w, Vec& g);
};

double softmax_cross_entropy(const Vec& logits, int target, Vec* dlogits,
                             double label_smoothing = 0.0);
Vec softmax(const Vec& logits);
double vec_dot(const Vec& a, const Vec& b);
double vec_norm(const Vec& a);
double cosine_similarity(const Vec& a, const Vec& b);

}  // namespace recall
