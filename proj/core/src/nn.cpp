#include "recall/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "recall/errors.hpp"

namespace recall {

namespace {

// Zero-padded copy used by the conv kernels so the inner loops stay
// branch-free and vectorizable.
void pad_input(const Tensor& x, int pad, Tensor& xp) {
    int ph = x.h + 2 * pad, pw = x.w + 2 * pad;
    if (xp.c != x.c || xp.h != ph || xp.w != pw) xp = Tensor(x.c, ph, pw);
    std::fill(xp.v.begin(), xp.v.end(), 0.0);
    for (int c = 0; c < x.c; ++c)
        for (int y = 0; y < x.h; ++y)
            std::memcpy(&xp.at(c, y + pad, pad), &x.at(c, y, 0), sizeof(double) * x.w);
}

// Fast kernels for the 3x3 stride-1 pad-1 convs that dominate runtime.
// Compile-time row width lets the compiler unroll fully and keep the
// accumulator row in vector registers while all nine taps are applied
// in a single pass.

template <int W>
inline void k3_row_acc(double* acc, const double* x0, const double* x1, const double* x2,
                       const double* w9) {
    for (int i = 0; i < W; ++i)
        acc[i] += w9[0] * x0[i] + w9[1] * x0[i + 1] + w9[2] * x0[i + 2] + w9[3] * x1[i] +
                  w9[4] * x1[i + 1] + w9[5] * x1[i + 2] + w9[6] * x2[i] + w9[7] * x2[i + 1] +
                  w9[8] * x2[i + 2];
}

template <int W>
inline double pairwise_sum(const double* a) {
    if constexpr (W == 1)
        return a[0];
    else
        return pairwise_sum<W / 2>(a) + pairwise_sum<W / 2>(a + W / 2);
}

template <int W>
void conv3x3_fwd(const double* w, const double* bias, const double* xp, int in_c, int h,
                 double* out, int out_c) {
    const int pw = W + 2, ph = h + 2;
    double acc[W];
    for (int oc = 0; oc < out_c; ++oc) {
        const double* wb = w + static_cast<std::size_t>(oc) * in_c * 9;
        double b = bias[oc];
        for (int y = 0; y < h; ++y) {
            for (int i = 0; i < W; ++i) acc[i] = b;
            for (int ic = 0; ic < in_c; ++ic) {
                const double* xr = xp + (static_cast<std::size_t>(ic) * ph + y) * pw;
                k3_row_acc<W>(acc, xr, xr + pw, xr + 2 * pw, wb + ic * 9);
            }
            double* orow = out + (static_cast<std::size_t>(oc) * h + y) * W;
            for (int i = 0; i < W; ++i) orow[i] = acc[i];
        }
    }
}

template <int W>
void conv3x3_dw(const double* xp, const double* dy, int in_c, int out_c, int h, double* gw,
                double* gb) {
    const int pw = W + 2, ph = h + 2;
    double lane[9][W];
    for (int oc = 0; oc < out_c; ++oc) {
        const double* dyb = dy + static_cast<std::size_t>(oc) * h * W;
        double db = 0.0;
        for (int i = 0; i < h * W; ++i) db += dyb[i];
        gb[oc] += db;
        for (int ic = 0; ic < in_c; ++ic) {
            for (int t = 0; t < 9; ++t)
                for (int i = 0; i < W; ++i) lane[t][i] = 0.0;
            const double* xb = xp + static_cast<std::size_t>(ic) * ph * pw;
            for (int y = 0; y < h; ++y) {
                const double* dyr = dyb + y * W;
                const double* x0 = xb + y * pw;
                const double* x1 = x0 + pw;
                const double* x2 = x1 + pw;
                for (int i = 0; i < W; ++i) {
                    double d = dyr[i];
                    lane[0][i] += d * x0[i];
                    lane[1][i] += d * x0[i + 1];
                    lane[2][i] += d * x0[i + 2];
                    lane[3][i] += d * x1[i];
                    lane[4][i] += d * x1[i + 1];
                    lane[5][i] += d * x1[i + 2];
                    lane[6][i] += d * x2[i];
                    lane[7][i] += d * x2[i + 1];
                    lane[8][i] += d * x2[i + 2];
                }
            }
            double* gk = gw + (static_cast<std::size_t>(oc) * in_c + ic) * 9;
            for (int t = 0; t < 9; ++t) gk[t] += pairwise_sum<W>(lane[t]);
        }
    }
}

// Input grads are a correlation of zero-padded dy with the flipped kernel,
// so they reuse the forward row-accumulation shape.
template <int W>
void conv3x3_dx(const double* w, const double* dyp, int out_c, int h, double* dx, int in_c) {
    const int pw = W + 2, ph = h + 2;
    double acc[W];
    double wf[64 * 9];
    for (int ic = 0; ic < in_c; ++ic) {
        for (int oc = 0; oc < out_c; ++oc) {
            const double* wk = w + (static_cast<std::size_t>(oc) * in_c + ic) * 9;
            for (int t = 0; t < 9; ++t) wf[oc * 9 + t] = wk[8 - t];
        }
        for (int y = 0; y < h; ++y) {
            for (int i = 0; i < W; ++i) acc[i] = 0.0;
            for (int oc = 0; oc < out_c; ++oc) {
                const double* dr = dyp + (static_cast<std::size_t>(oc) * ph + y) * pw;
                k3_row_acc<W>(acc, dr, dr + pw, dr + 2 * pw, wf + oc * 9);
            }
            double* dxr = dx + (static_cast<std::size_t>(ic) * h + y) * W;
            for (int i = 0; i < W; ++i) dxr[i] = acc[i];
        }
    }
}

}  // namespace

Conv2d Conv2d::make(ParamAlloc& a, int in_c, int out_c, int k, int stride, int pad) {
    Conv2d c;
    c.in_c = in_c;
    c.out_c = out_c;
    c.k = k;
    c.stride = stride;
    c.pad = pad;
    c.w_off = a.take(static_cast<std::size_t>(out_c) * in_c * k * k);
    c.b_off = a.take(out_c);
    return c;
}

void Conv2d::init_kaiming(double* w, Rng& rng) const {
    double std = std::sqrt(2.0 / (static_cast<double>(in_c) * k * k));
    std::size_t n = static_cast<std::size_t>(out_c) * in_c * k * k;
    for (std::size_t i = 0; i < n; ++i) w[w_off + i] = rng.normal() * std;
    for (int i = 0; i < out_c; ++i) w[b_off + i] = 0.0;
}

void Conv2d::init_zero(double* w) const {
    std::size_t n = static_cast<std::size_t>(out_c) * in_c * k * k;
    for (std::size_t i = 0; i < n; ++i) w[w_off + i] = 0.0;
    for (int i = 0; i < out_c; ++i) w[b_off + i] = 0.0;
}

Tensor Conv2d::forward(const double* w, const Tensor& x) const {
    if (x.c != in_c) throw NumericsError("Conv2d::forward: channel mismatch");
    int oh = out_dim(x.h), ow = out_dim(x.w);
    Tensor out(out_c, oh, ow);
    Tensor xp;
    pad_input(x, pad, xp);

    if (k == 3 && stride == 1 && pad == 1 && x.h == x.w && in_c <= 64 && out_c <= 64) {
        const double* wp = &w[w_off];
        const double* bp = &w[b_off];
        if (x.w == 8) {
            conv3x3_fwd<8>(wp, bp, xp.data(), in_c, x.h, out.data(), out_c);
            return out;
        }
        if (x.w == 16) {
            conv3x3_fwd<16>(wp, bp, xp.data(), in_c, x.h, out.data(), out_c);
            return out;
        }
        if (x.w == 32) {
            conv3x3_fwd<32>(wp, bp, xp.data(), in_c, x.h, out.data(), out_c);
            return out;
        }
    }

    for (int oc = 0; oc < out_c; ++oc) {
        double* orow0 = &out.at(oc, 0, 0);
        double b = w[b_off + oc];
        for (int i = 0; i < oh * ow; ++i) orow0[i] = b;
        for (int ic = 0; ic < in_c; ++ic) {
            const double* wk = &w[w_off + (static_cast<std::size_t>(oc) * in_c + ic) * k * k];
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    double wv = wk[ky * k + kx];
                    for (int y = 0; y < oh; ++y) {
                        const double* xrow = &xp.at(ic, y * stride + ky, kx);
                        double* orow = &out.at(oc, y, 0);
                        if (stride == 1) {
                            for (int xph = 0; xph < ow; ++xph) orow[xph] += wv * xrow[xph];
                        } else {
                            for (int xph = 0; xph < ow; ++xph) orow[xph] += wv * xrow[xph * stride];
                        }
                    }
                }
        }
    }
    return out;
}

Tensor Conv2d::backward(const double* w, const Tensor& x, const Tensor& dy, double* g,
                        bool want_dx) const {
    int oh = out_dim(x.h), ow = out_dim(x.w);
    if (dy.c != out_c || dy.h != oh || dy.w != ow)
        throw NumericsError("Conv2d::backward: dy shape mismatch");
    Tensor xp;
    pad_input(x, pad, xp);

    bool fast = k == 3 && stride == 1 && pad == 1 && x.h == x.w && in_c <= 64 && out_c <= 64 &&
                (x.w == 8 || x.w == 16 || x.w == 32);

    if (g) {
        if (fast) {
            double* gw = &g[w_off];
            double* gb = &g[b_off];
            if (x.w == 8) conv3x3_dw<8>(xp.data(), dy.data(), in_c, out_c, x.h, gw, gb);
            else if (x.w == 16) conv3x3_dw<16>(xp.data(), dy.data(), in_c, out_c, x.h, gw, gb);
            else conv3x3_dw<32>(xp.data(), dy.data(), in_c, out_c, x.h, gw, gb);
        } else {
            for (int oc = 0; oc < out_c; ++oc) {
                double db = 0.0;
                const double* dyrow0 = &dy.at(oc, 0, 0);
                for (int i = 0; i < oh * ow; ++i) db += dyrow0[i];
                g[b_off + oc] += db;
                for (int ic = 0; ic < in_c; ++ic) {
                    double* gk = &g[w_off + (static_cast<std::size_t>(oc) * in_c + ic) * k * k];
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            double acc = 0.0;
                            for (int y = 0; y < oh; ++y) {
                                const double* xrow = &xp.at(ic, y * stride + ky, kx);
                                const double* dyrow = &dy.at(oc, y, 0);
                                if (stride == 1) {
                                    for (int xph = 0; xph < ow; ++xph) acc += dyrow[xph] * xrow[xph];
                                } else {
                                    for (int xph = 0; xph < ow; ++xph)
                                        acc += dyrow[xph] * xrow[xph * stride];
                                }
                            }
                            gk[ky * k + kx] += acc;
                        }
                }
            }
        }
    }

    if (!want_dx) return Tensor();

    if (fast) {
        Tensor dyp(out_c, oh + 2, ow + 2);
        for (int oc = 0; oc < out_c; ++oc)
            for (int y = 0; y < oh; ++y)
                std::memcpy(&dyp.at(oc, y + 1, 1), &dy.at(oc, y, 0), sizeof(double) * ow);
        Tensor dx(x.c, x.h, x.w);
        const double* wp = &w[w_off];
        if (x.w == 8) conv3x3_dx<8>(wp, dyp.data(), out_c, x.h, dx.data(), in_c);
        else if (x.w == 16) conv3x3_dx<16>(wp, dyp.data(), out_c, x.h, dx.data(), in_c);
        else conv3x3_dx<32>(wp, dyp.data(), out_c, x.h, dx.data(), in_c);
        return dx;
    }

    Tensor dxp(x.c, x.h + 2 * pad, x.w + 2 * pad);
    for (int oc = 0; oc < out_c; ++oc)
        for (int ic = 0; ic < in_c; ++ic) {
            const double* wk = &w[w_off + (static_cast<std::size_t>(oc) * in_c + ic) * k * k];
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    double wv = wk[ky * k + kx];
                    for (int y = 0; y < oh; ++y) {
                        double* dxrow = &dxp.at(ic, y * stride + ky, kx);
                        const double* dyrow = &dy.at(oc, y, 0);
                        if (stride == 1) {
                            for (int xph = 0; xph < ow; ++xph) dxrow[xph] += wv * dyrow[xph];
                        } else {
                            for (int xph = 0; xph < ow; ++xph) dxrow[xph * stride] += wv * dyrow[xph];
                        }
                    }
                }
        }
    Tensor dx(x.c, x.h, x.w);
    for (int c = 0; c < x.c; ++c)
        for (int y = 0; y < x.h; ++y)
            std::memcpy(&dx.at(c, y, 0), &dxp.at(c, y + pad, pad), sizeof(double) * x.w);
    return dx;
}

Linear Linear::make(ParamAlloc& a, int in, int out, bool bias) {
    Linear l;
    l.in = in;
    l.out = out;
    l.has_bias = bias;
    l.w_off = a.take(static_cast<std::size_t>(out) * in);
    l.b_off = bias ? a.take(out) : 0;
    return l;
}

void Linear::init_kaiming(double* w, Rng& rng) const {
    double std = std::sqrt(2.0 / in);
    std::size_t n = static_cast<std::size_t>(out) * in;
    for (std::size_t i = 0; i < n; ++i) w[w_off + i] = rng.normal() * std;
    if (has_bias)
        for (int i = 0; i < out; ++i) w[b_off + i] = 0.0;
}

void Linear::init_zero(double* w) const {
    std::size_t n = static_cast<std::size_t>(out) * in;
    for (std::size_t i = 0; i < n; ++i) w[w_off + i] = 0.0;
    if (has_bias)
        for (int i = 0; i < out; ++i) w[b_off + i] = 0.0;
}

void Linear::forward(const double* w, const double* x, double* y) const {
    for (int o = 0; o < out; ++o) {
        const double* wr = &w[w_off + static_cast<std::size_t>(o) * in];
        double acc = has_bias ? w[b_off + o] : 0.0;
        for (int i = 0; i < in; ++i) acc += wr[i] * x[i];
        y[o] = acc;
    }
}

void Linear::backward(const double* w, const double* x, const double* dy, double* g,
                      double* dx) const {
    if (g) {
        for (int o = 0; o < out; ++o) {
            double* gr = &g[w_off + static_cast<std::size_t>(o) * in];
            double d = dy[o];
            for (int i = 0; i < in; ++i) gr[i] += d * x[i];
            if (has_bias) g[b_off + o] += d;
        }
    }
    if (dx) {
        for (int i = 0; i < in; ++i) dx[i] = 0.0;
        for (int o = 0; o < out; ++o) {
            const double* wr = &w[w_off + static_cast<std::size_t>(o) * in];
            double d = dy[o];
            for (int i = 0; i < in; ++i) dx[i] += d * wr[i];
        }
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu(double x) { return x * sigmoid(x); }
double silu_grad(double x) {
    double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

Tensor silu_forward(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.v) v = silu(v);
    return y;
}

Tensor silu_backward(const Tensor& x_pre, const Tensor& dy) {
    Tensor dx = dy;
    for (int i = 0; i < dx.size(); ++i) dx.v[i] *= silu_grad(x_pre.v[i]);
    return dx;
}

void silu_forward_vec(const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] = silu(x[i]);
}

void silu_backward_vec(const double* x_pre, const double* dy, double* dx, int n) {
    for (int i = 0; i < n; ++i) dx[i] = dy[i] * silu_grad(x_pre[i]);
}

Tensor sigmoid_forward(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.v) v = sigmoid(v);
    return y;
}

Tensor sigmoid_backward(const Tensor& y_post, const Tensor& dy) {
    Tensor dx = dy;
    for (int i = 0; i < dx.size(); ++i) dx.v[i] *= y_post.v[i] * (1.0 - y_post.v[i]);
    return dx;
}

Tensor avgpool2_forward(const Tensor& x) {
    Tensor y(x.c, x.h / 2, x.w / 2);
    for (int c = 0; c < x.c; ++c)
        for (int oy = 0; oy < y.h; ++oy)
            for (int ox = 0; ox < y.w; ++ox)
                y.at(c, oy, ox) = 0.25 * (x.at(c, 2 * oy, 2 * ox) + x.at(c, 2 * oy, 2 * ox + 1) +
                                          x.at(c, 2 * oy + 1, 2 * ox) + x.at(c, 2 * oy + 1, 2 * ox + 1));
    return y;
}

Tensor avgpool2_backward(const Tensor& dy, int in_h, int in_w) {
    Tensor dx(dy.c, in_h, in_w);
    for (int c = 0; c < dy.c; ++c)
        for (int oy = 0; oy < dy.h; ++oy)
            for (int ox = 0; ox < dy.w; ++ox) {
                double d = 0.25 * dy.at(c, oy, ox);
                dx.at(c, 2 * oy, 2 * ox) += d;
                dx.at(c, 2 * oy, 2 * ox + 1) += d;
                dx.at(c, 2 * oy + 1, 2 * ox) += d;
                dx.at(c, 2 * oy + 1, 2 * ox + 1) += d;
            }
    return dx;
}

Vec gap_forward(const Tensor& x) {
    Vec y(x.c, 0.0);
    double inv = 1.0 / (x.h * x.w);
    for (int c = 0; c < x.c; ++c) {
        double acc = 0.0;
        const double* row = &x.at(c, 0, 0);
        for (int i = 0; i < x.h * x.w; ++i) acc += row[i];
        y[c] = acc * inv;
    }
    return y;
}

Tensor gap_backward(const Vec& dy, int c, int h, int w) {
    Tensor dx(c, h, w);
    double inv = 1.0 / (h * w);
    for (int ci = 0; ci < c; ++ci) {
        double d = dy[ci] * inv;
        double* row = &dx.at(ci, 0, 0);
        for (int i = 0; i < h * w; ++i) row[i] = d;
    }
    return dx;
}

Tensor upsample2_forward(const Tensor& x) {
    Tensor y(x.c, x.h * 2, x.w * 2);
    for (int c = 0; c < x.c; ++c)
        for (int oy = 0; oy < y.h; ++oy)
            for (int ox = 0; ox < y.w; ++ox) y.at(c, oy, ox) = x.at(c, oy / 2, ox / 2);
    return y;
}

Tensor upsample2_backward(const Tensor& dy) {
    Tensor dx(dy.c, dy.h / 2, dy.w / 2);
    for (int c = 0; c < dy.c; ++c)
        for (int oy = 0; oy < dy.h; ++oy)
            for (int ox = 0; ox < dy.w; ++ox) dx.at(c, oy / 2, ox / 2) += dy.at(c, oy, ox);
    return dx;
}

Vec sinusoidal_embedding(int t, int dim) {
    if (dim % 2 != 0) throw NumericsError("sinusoidal_embedding: dim must be even");
    int half = dim / 2;
    Vec e(dim, 0.0);
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * i / (half - 1));
        e[i] = std::sin(t * freq);
        e[half + i] = std::cos(t * freq);
    }
    return e;
}

void Adam::step(Vec& w, Vec& g) {
    if (w.size() != m.size() || g.size() != m.size())
        throw NumericsError("Adam::step: size mismatch");
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        g[i] = 0.0;
    }
}

Vec softmax(const Vec& logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    Vec p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (double& x : p) x /= z;
    return p;
}

double softmax_cross_entropy(const Vec& logits, int target, Vec* dlogits,
                             double label_smoothing) {
    int n = static_cast<int>(logits.size());
    if (target < 0 || target >= n) throw NumericsError("softmax_cross_entropy: bad target");
    Vec p = softmax(logits);
    double off = label_smoothing / n;
    double on = 1.0 - label_smoothing + off;
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        double q = (i == target) ? on : off;
        if (q > 0.0) loss -= q * std::log(std::max(p[i], 1e-300));
    }
    if (dlogits) {
        dlogits->resize(n);
        for (int i = 0; i < n; ++i) {
            double q = (i == target) ? on : off;
            (*dlogits)[i] = p[i] - q;
        }
    }
    return loss;
}

double vec_dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double vec_norm(const Vec& a) { return std::sqrt(vec_dot(a, a)); }

double cosine_similarity(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw NumericsError("cosine_similarity: size mismatch");
    double na = vec_norm(a), nb = vec_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return vec_dot(a, b) / (na * nb);
}

}  // namespace recall
