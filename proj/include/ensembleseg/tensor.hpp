#pragma once
// Minimal NCHW tensor plus the layer primitives the backbone needs:
// im2col convolution (GEMM via Eigen), 2x2 transposed convolution, max
// pooling, relu, inverted dropout and per-pixel softmax. Templated on the
// scalar type; float is used for training, double for the finite-difference
// gradient checks in the test suite.
//
// Forward/backward routines allocate their scratch locally, so const calls
// are reentrant.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ensembleseg/rng.hpp"

namespace eseg {

template <class T>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {}

    std::size_t size() const { return v.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::size_t sample_stride() const { return static_cast<std::size_t>(c) * h * w; }

    T* sample(int i) { return v.data() + sample_stride() * i; }
    const T* sample(int i) const { return v.data() + sample_stride() * i; }

    T& at(int in, int ic, int iy, int ix) {
        return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }
    T at(int in, int ic, int iy, int ix) const {
        return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }
    void fill(T value) { std::fill(v.begin(), v.end(), value); }
};

// Named parameter tensor with its gradient accumulator.
template <class T>
struct Param {
    std::string name;
    std::vector<T> value;
    std::vector<T> grad;

    void resize(std::size_t count) {
        value.assign(count, T(0));
        grad.assign(count, T(0));
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[M,N] = A[M,K] * B[K,N], optionally accumulating into C.
template <class T>
void gemm_nn(const T* a, int m, int k, const T* b, int n, T* c, bool accumulate) {
    Eigen::Map<const RowMat<T>> A(a, m, k), B(b, k, n);
    Eigen::Map<RowMat<T>> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

// C[M,N] = A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(const T* a, int m, int k, const T* b, int n, T* c, bool accumulate) {
    Eigen::Map<const RowMat<T>> A(a, m, k), B(b, n, k);
    Eigen::Map<RowMat<T>> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

// C[M,N] = A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(const T* a, int k, int m, const T* b, int n, T* c, bool accumulate) {
    Eigen::Map<const RowMat<T>> A(a, k, m), B(b, k, n);
    Eigen::Map<RowMat<T>> C(c, m, n);
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

// Expand one sample plane (C,H,W) into columns (C*k*k, H*W), stride 1.
template <class T>
void im2col(const T* x, int channels, int h, int w, int k, int pad, T* col) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * plane;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    T* dst = row + static_cast<std::size_t>(y) * w;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, T(0));
                        continue;
                    }
                    const T* src = x + c * plane + static_cast<std::size_t>(sy) * w;
                    for (int x0 = 0; x0 < w; ++x0) {
                        const int sx = x0 + kx - pad;
                        dst[x0] = (sx >= 0 && sx < w) ? src[sx] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add columns (C*k*k, H*W) back into a sample plane (C,H,W).
template <class T>
void col2im(const T* col, int channels, int h, int w, int k, int pad, T* x) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::fill(x, x + static_cast<std::size_t>(channels) * plane, T(0));
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * plane;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    T* dst = x + c * plane + static_cast<std::size_t>(sy) * w;
                    const T* src = row + static_cast<std::size_t>(y) * w;
                    for (int x0 = 0; x0 < w; ++x0) {
                        const int sx = x0 + kx - pad;
                        if (sx >= 0 && sx < w) dst[sx] += src[x0];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Same-padding square convolution, stride 1 (3x3 pad 1 and 1x1 pad 0 here).
template <class T>
struct Conv2d {
    int in_ch = 0, out_ch = 0, k = 1, pad = 0;
    Param<T> weight;  // [out_ch, in_ch*k*k]
    Param<T> bias;    // [out_ch]

    void configure(const std::string& name, int in, int out, int kernel, int padding) {
        in_ch = in;
        out_ch = out;
        k = kernel;
        pad = padding;
        weight.name = name + ".weight";
        bias.name = name + ".bias";
        weight.resize(static_cast<std::size_t>(out) * in * kernel * kernel);
        bias.resize(out);
    }

    void init(Rng& rng) {
        const double fan_in = double(in_ch) * k * k;
        const double stddev = std::sqrt(2.0 / fan_in);
        for (T& v : weight.value) v = static_cast<T>(rng.normal() * stddev);
        std::fill(bias.value.begin(), bias.value.end(), T(0));
    }

    Tensor4<T> forward(const Tensor4<T>& x) const {
        Tensor4<T> y(x.n, out_ch, x.h, x.w);
        const int rows = in_ch * k * k;
        const std::size_t plane = x.plane();
        std::vector<T> col;
        if (k != 1) col.resize(static_cast<std::size_t>(rows) * plane);
        for (int s = 0; s < x.n; ++s) {
            const T* xs = x.sample(s);
            const T* cols = xs;
            if (k != 1) {
                detail::im2col(xs, in_ch, x.h, x.w, k, pad, col.data());
                cols = col.data();
            }
            T* ys = y.sample(s);
            detail::gemm_nn(weight.value.data(), out_ch, rows, cols, static_cast<int>(plane), ys,
                            false);
            for (int oc = 0; oc < out_ch; ++oc) {
                T* row = ys + oc * plane;
                const T b = bias.value[oc];
                for (std::size_t j = 0; j < plane; ++j) row[j] += b;
            }
        }
        return y;
    }

    // Accumulates weight/bias gradients and returns dL/dx. x must be the
    // forward input.
    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& dy) {
        Tensor4<T> dx(x.n, in_ch, x.h, x.w);
        const int rows = in_ch * k * k;
        const std::size_t plane = x.plane();
        std::vector<T> col, dcol;
        if (k != 1) {
            col.resize(static_cast<std::size_t>(rows) * plane);
            dcol.resize(static_cast<std::size_t>(rows) * plane);
        }
        for (int s = 0; s < x.n; ++s) {
            const T* xs = x.sample(s);
            const T* dys = dy.sample(s);
            const T* cols = xs;
            if (k != 1) {
                detail::im2col(xs, in_ch, x.h, x.w, k, pad, col.data());
                cols = col.data();
            }
            // dW += dY * col^T, db += row sums of dY
            detail::gemm_nt(dys, out_ch, static_cast<int>(plane), cols, rows,
                            weight.grad.data(), true);
            for (int oc = 0; oc < out_ch; ++oc) {
                const T* row = dys + oc * plane;
                T acc = T(0);
                for (std::size_t j = 0; j < plane; ++j) acc += row[j];
                bias.grad[oc] += acc;
            }
            // dcol = W^T * dY, then fold back to dx
            if (k != 1) {
                detail::gemm_tn(weight.value.data(), out_ch, rows, dys, static_cast<int>(plane),
                                dcol.data(), false);
                detail::col2im(dcol.data(), in_ch, x.h, x.w, k, pad, dx.sample(s));
            } else {
                detail::gemm_tn(weight.value.data(), out_ch, rows, dys, static_cast<int>(plane),
                                dx.sample(s), false);
            }
        }
        return dx;
    }
};

// Learned 2x up-convolution (kernel 2, stride 2; output blocks do not
// overlap, so it reduces to a per-pixel linear map plus pixel scatter).
template <class T>
struct UpConv2x2 {
    int in_ch = 0, out_ch = 0;
    Param<T> weight;  // [out_ch*4, in_ch], row = (oc*2 + dy)*2 + dx
    Param<T> bias;    // [out_ch]

    void configure(const std::string& name, int in, int out) {
        in_ch = in;
        out_ch = out;
        weight.name = name + ".weight";
        bias.name = name + ".bias";
        weight.resize(static_cast<std::size_t>(out) * 4 * in);
        bias.resize(out);
    }

    void init(Rng& rng) {
        const double stddev = std::sqrt(2.0 / double(in_ch));
        for (T& v : weight.value) v = static_cast<T>(rng.normal() * stddev);
        std::fill(bias.value.begin(), bias.value.end(), T(0));
    }

    Tensor4<T> forward(const Tensor4<T>& x) const {
        Tensor4<T> y(x.n, out_ch, x.h * 2, x.w * 2);
        const std::size_t plane = x.plane();
        std::vector<T> r(static_cast<std::size_t>(out_ch) * 4 * plane);
        for (int s = 0; s < x.n; ++s) {
            detail::gemm_nn(weight.value.data(), out_ch * 4, in_ch, x.sample(s),
                            static_cast<int>(plane), r.data(), false);
            T* ys = y.sample(s);
            for (int oc = 0; oc < out_ch; ++oc) {
                const T b = bias.value[oc];
                for (int q = 0; q < 4; ++q) {
                    const T* src = r.data() + (static_cast<std::size_t>(oc) * 4 + q) * plane;
                    const int dy0 = q >> 1, dx0 = q & 1;
                    for (int iy = 0; iy < x.h; ++iy) {
                        T* dst = ys + oc * y.plane() +
                                 static_cast<std::size_t>(iy * 2 + dy0) * y.w + dx0;
                        const T* row = src + static_cast<std::size_t>(iy) * x.w;
                        for (int ix = 0; ix < x.w; ++ix) dst[ix * 2] = row[ix] + b;
                    }
                }
            }
        }
        return y;
    }

    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& dy) {
        Tensor4<T> dx(x.n, in_ch, x.h, x.w);
        const std::size_t plane = x.plane();
        std::vector<T> g(static_cast<std::size_t>(out_ch) * 4 * plane);
        for (int s = 0; s < x.n; ++s) {
            const T* dys = dy.sample(s);
            const std::size_t dplane = static_cast<std::size_t>(x.h * 2) * (x.w * 2);
            for (int oc = 0; oc < out_ch; ++oc) {
                T bacc = T(0);
                for (int q = 0; q < 4; ++q) {
                    T* dst = g.data() + (static_cast<std::size_t>(oc) * 4 + q) * plane;
                    const int dy0 = q >> 1, dx0 = q & 1;
                    for (int iy = 0; iy < x.h; ++iy) {
                        const T* src = dys + oc * dplane +
                                       static_cast<std::size_t>(iy * 2 + dy0) * (x.w * 2) + dx0;
                        T* row = dst + static_cast<std::size_t>(iy) * x.w;
                        for (int ix = 0; ix < x.w; ++ix) {
                            row[ix] = src[ix * 2];
                            bacc += src[ix * 2];
                        }
                    }
                }
                bias.grad[oc] += bacc;
            }
            detail::gemm_nt(g.data(), out_ch * 4, static_cast<int>(plane), x.sample(s), in_ch,
                            weight.grad.data(), true);
            detail::gemm_tn(weight.value.data(), out_ch * 4, in_ch, g.data(),
                            static_cast<int>(plane), dx.sample(s), false);
        }
        return dx;
    }
};

// 2x2 max pooling with stride 2; records argmax indices for the backward
// scatter.
template <class T>
Tensor4<T> maxpool2(const Tensor4<T>& x, std::vector<std::int32_t>& argmax) {
    Tensor4<T> y(x.n, x.c, x.h / 2, x.w / 2);
    argmax.resize(y.size());
    std::size_t out = 0;
    for (int s = 0; s < x.n; ++s) {
        for (int c = 0; c < x.c; ++c) {
            const T* plane = x.sample(s) + static_cast<std::size_t>(c) * x.plane();
            for (int iy = 0; iy < y.h; ++iy) {
                for (int ix = 0; ix < y.w; ++ix) {
                    const int base = (iy * 2) * x.w + ix * 2;
                    int best = base;
                    T bestv = plane[base];
                    const int cand[3] = {base + 1, base + x.w, base + x.w + 1};
                    for (int idx : cand) {
                        if (plane[idx] > bestv) {
                            bestv = plane[idx];
                            best = idx;
                        }
                    }
                    y.v[out] = bestv;
                    argmax[out] = best;
                    ++out;
                }
            }
        }
    }
    return y;
}

template <class T>
Tensor4<T> maxpool2_backward(const Tensor4<T>& dy, const std::vector<std::int32_t>& argmax,
                             int in_h, int in_w) {
    Tensor4<T> dx(dy.n, dy.c, in_h, in_w);
    std::size_t out = 0;
    for (int s = 0; s < dy.n; ++s) {
        for (int c = 0; c < dy.c; ++c) {
            T* plane = dx.sample(s) + static_cast<std::size_t>(c) * dx.plane();
            for (std::size_t j = 0; j < dy.plane(); ++j, ++out) {
                plane[argmax[out]] += dy.v[out];
            }
        }
    }
    return dx;
}

template <class T>
void relu_inplace(Tensor4<T>& x) {
    for (T& v : x.v)
        if (v < T(0)) v = T(0);
}

// dL/dx = dL/dy where the activation was positive; activations here are the
// post-relu values.
template <class T>
void relu_backward_inplace(const Tensor4<T>& activated, Tensor4<T>& d) {
    for (std::size_t i = 0; i < d.v.size(); ++i)
        if (activated.v[i] <= T(0)) d.v[i] = T(0);
}

// Inverted dropout; mask entries are 1 with probability (1 - rate).
template <class T>
void dropout_inplace(Tensor4<T>& x, double rate, Rng& rng, std::vector<std::uint8_t>& mask) {
    mask.resize(x.size());
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        const bool keep = rng.next_double() >= rate;
        mask[i] = keep ? 1 : 0;
        x.v[i] = keep ? x.v[i] * scale : T(0);
    }
}

template <class T>
void dropout_backward_inplace(Tensor4<T>& d, double rate, const std::vector<std::uint8_t>& mask) {
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < d.v.size(); ++i) d.v[i] = mask[i] ? d.v[i] * scale : T(0);
}

// Channel concatenation along dim 1; a first, then b.
template <class T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
    Tensor4<T> y(a.n, a.c + b.c, a.h, a.w);
    for (int s = 0; s < a.n; ++s) {
        std::copy(a.sample(s), a.sample(s) + a.sample_stride(), y.sample(s));
        std::copy(b.sample(s), b.sample(s) + b.sample_stride(),
                  y.sample(s) + a.sample_stride());
    }
    return y;
}

template <class T>
void split_channels(const Tensor4<T>& d, int a_channels, Tensor4<T>& da, Tensor4<T>& db) {
    da = Tensor4<T>(d.n, a_channels, d.h, d.w);
    db = Tensor4<T>(d.n, d.c - a_channels, d.h, d.w);
    for (int s = 0; s < d.n; ++s) {
        std::copy(d.sample(s), d.sample(s) + da.sample_stride(), da.sample(s));
        std::copy(d.sample(s) + da.sample_stride(), d.sample(s) + d.sample_stride(),
                  db.sample(s));
    }
}

// Per-pixel softmax over the channel dimension.
template <class T>
Tensor4<T> softmax_channels(const Tensor4<T>& logits) {
    Tensor4<T> p(logits.n, logits.c, logits.h, logits.w);
    const std::size_t plane = logits.plane();
    for (int s = 0; s < logits.n; ++s) {
        const T* zs = logits.sample(s);
        T* ps = p.sample(s);
        for (std::size_t j = 0; j < plane; ++j) {
            T mx = zs[j];
            for (int c = 1; c < logits.c; ++c) mx = std::max(mx, zs[c * plane + j]);
            T sum = T(0);
            for (int c = 0; c < logits.c; ++c) {
                const T e = std::exp(zs[c * plane + j] - mx);
                ps[c * plane + j] = e;
                sum += e;
            }
            for (int c = 0; c < logits.c; ++c) ps[c * plane + j] /= sum;
        }
    }
    return p;
}

}  // namespace eseg
