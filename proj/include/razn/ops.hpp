#pragma once

// Forward and backward kernels for every differentiable operation the networks use.
// All functions are pure over their arguments; layout is NCHW throughout.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "razn/errors.hpp"
#include "razn/tensor.hpp"

namespace razn::ops {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require_rank(const char* op, int rank, int want) {
    if (rank != want) {
        throw ConfigError(std::string(op) + ": expected rank " + std::to_string(want) + ", got " + std::to_string(rank));
    }
}

// ---------------------------------------------------------------------------
// conv2d

struct Conv2dParams {
    int stride = 1;
    int pad = 0;
    int dilation = 1;
};

inline int conv_out_size(int in, int k, const Conv2dParams& p) {
    return (in + 2 * p.pad - p.dilation * (k - 1) - 1) / p.stride + 1;
}

inline void check_conv(const Shape& x, const Shape& w, const Conv2dParams& p) {
    if (x.size() != 4 || w.size() != 4) throw ConfigError("conv2d: input and kernel must be rank 4");
    if (w[1] != x[1]) {
        throw ConfigError("conv2d: kernel expects " + std::to_string(w[1]) + " channels, input has " + std::to_string(x[1]));
    }
    if (w[2] % 2 == 0 || w[3] % 2 == 0) throw ConfigError("conv2d: kernel extents must be odd");
    if (p.stride < 1 || p.dilation < 1 || p.pad < 0) throw ConfigError("conv2d: invalid stride/pad/dilation");
    const int span_h = x[2] + 2 * p.pad - p.dilation * (w[2] - 1) - 1;
    const int span_w = x[3] + 2 * p.pad - p.dilation * (w[3] - 1) - 1;
    if (span_h < 0 || span_w < 0) throw ConfigError("conv2d: kernel larger than padded input");
}

namespace detail {

inline bool is_pointwise(const Shape& w, const Conv2dParams& p) {
    return w[2] == 1 && w[3] == 1 && p.stride == 1 && p.pad == 0;
}

// col[(c*kh + i)*kw + j][oy*ow + ox] = x[c, oy*s - pad + i*d, ox*s - pad + j*d]
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, const Conv2dParams& p, int oh, int ow, T* col) {
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                T* dst = col + (static_cast<std::size_t>(c * kh + i) * kw + j) * plane;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * p.stride - p.pad + i * p.dilation;
                    T* row = dst + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= H) {
                        std::fill_n(row, ow, T(0));
                        continue;
                    }
                    const T* src = x + (static_cast<std::size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * p.stride - p.pad + j * p.dilation;
                        row[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, int C, int H, int W, int kh, int kw, const Conv2dParams& p, int oh, int ow, T* x) {
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                const T* src = col + (static_cast<std::size_t>(c * kh + i) * kw + j) * plane;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * p.stride - p.pad + i * p.dilation;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = x + (static_cast<std::size_t>(c) * H + iy) * W;
                    const T* row = src + static_cast<std::size_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * p.stride - p.pad + j * p.dilation;
                        if (ix >= 0 && ix < W) dst[ix] += row[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// Cross-correlation of x[N,C,H,W] with w[K,C,kh,kw]; bias (length K) may be null.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, const Conv2dParams& p) {
    check_conv(x.shape(), w.shape(), p);
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (bias && (bias->rank() != 1 || bias->dim(0) != K)) throw ConfigError("conv2d: bias length must equal output channels");
    const int oh = conv_out_size(H, kh, p), ow = conv_out_size(W, kw, p);
    const int ckk = C * kh * kw;
    const int plane = oh * ow;
    Tensor<T> y({N, K, oh, ow});
    AlignedVector<T> col;
    const bool pointwise = detail::is_pointwise(w.shape(), p);
    if (!pointwise) col.resize(static_cast<std::size_t>(ckk) * plane);
    ConstMatMap<T> wm(w.data(), K, ckk);
    for (int n = 0; n < N; ++n) {
        const T* xn = x.data() + static_cast<std::size_t>(n) * C * H * W;
        const T* cp = xn;
        if (!pointwise) {
            detail::im2col(xn, C, H, W, kh, kw, p, oh, ow, col.data());
            cp = col.data();
        }
        MatMap<T> ym(y.data() + static_cast<std::size_t>(n) * K * plane, K, plane);
        ym.noalias() = wm * ConstMatMap<T>(cp, ckk, plane);
        if (bias) {
            for (int k = 0; k < K; ++k) ym.row(k).array() += (*bias)[static_cast<std::size_t>(k)];
        }
    }
    return y;
}

template <typename T>
struct Conv2dGrads {
    Tensor<T> input;   // empty unless requested
    Tensor<T> kernel;
    Tensor<T> bias;    // empty unless has_bias
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Conv2dParams& p, const Tensor<T>& gy,
                               bool need_input_grad, bool has_bias) {
    check_conv(x.shape(), w.shape(), p);
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int oh = conv_out_size(H, kh, p), ow = conv_out_size(W, kw, p);
    if (gy.shape() != Shape{N, K, oh, ow}) throw ConfigError("conv2d_backward: output gradient shape mismatch");
    const int ckk = C * kh * kw;
    const int plane = oh * ow;
    Conv2dGrads<T> g;
    g.kernel = Tensor<T>::like(w);
    if (need_input_grad) g.input = Tensor<T>::like(x);
    if (has_bias) g.bias = Tensor<T>({K});
    const bool pointwise = detail::is_pointwise(w.shape(), p);
    AlignedVector<T> col(pointwise ? 0 : static_cast<std::size_t>(ckk) * plane);
    AlignedVector<T> gcol(need_input_grad && !pointwise ? static_cast<std::size_t>(ckk) * plane : 0);
    ConstMatMap<T> wm(w.data(), K, ckk);
    MatMap<T> gwm(g.kernel.data(), K, ckk);
    for (int n = 0; n < N; ++n) {
        const T* xn = x.data() + static_cast<std::size_t>(n) * C * H * W;
        const T* cp = xn;
        if (!pointwise) {
            detail::im2col(xn, C, H, W, kh, kw, p, oh, ow, col.data());
            cp = col.data();
        }
        ConstMatMap<T> gym(gy.data() + static_cast<std::size_t>(n) * K * plane, K, plane);
        gwm.noalias() += gym * ConstMatMap<T>(cp, ckk, plane).transpose();
        if (has_bias) {
            for (int k = 0; k < K; ++k) g.bias[static_cast<std::size_t>(k)] += gym.row(k).sum();
        }
        if (need_input_grad) {
            T* gxn = g.input.data() + static_cast<std::size_t>(n) * C * H * W;
            if (pointwise) {
                MatMap<T>(gxn, C, plane).noalias() = wm.transpose() * gym;
            } else {
                MatMap<T>(gcol.data(), ckk, plane).noalias() = wm.transpose() * gym;
                detail::col2im(gcol.data(), C, H, W, kh, kw, p, oh, ow, gxn);
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// batchnorm2d

enum class Mode { Train, Eval };

struct BatchNormConfig {
    double eps = 1e-5;
    double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
};

template <typename T>
struct BatchNormCache {
    Tensor<T> xhat;
    std::vector<T> invstd;
    Mode mode = Mode::Train;
};

/// Per-channel normalization. In Train mode uses batch statistics and updates
/// running_mean/running_var in place; in Eval mode uses the running statistics.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                      Tensor<T>& running_var, Mode mode, const BatchNormConfig& cfg = {},
                      BatchNormCache<T>* cache = nullptr) {
    require_rank("batchnorm2d", x.rank(), 4);
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    for (const Tensor<T>* t : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
        if (t->rank() != 1 || t->dim(0) != C) throw ConfigError("batchnorm2d: per-channel tensors must have length C");
    }
    const std::size_t count = static_cast<std::size_t>(N) * HW;
    if (mode == Mode::Train && count <= 1) {
        throw DegenerateBatchError("batchnorm2d: training mode needs N*H*W > 1, got " + std::to_string(count));
    }
    Tensor<T> y = Tensor<T>::like(x);
    Tensor<T> xhat = Tensor<T>::like(x);
    std::vector<T> invstd(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
        T mean, var;
        if (mode == Mode::Train) {
            double s = 0.0;
            for (int n = 0; n < N; ++n) {
                const T* p = x.data() + (static_cast<std::size_t>(n) * C + c) * HW;
                for (int i = 0; i < HW; ++i) s += p[i];
            }
            const double m = s / static_cast<double>(count);
            double ss = 0.0;
            for (int n = 0; n < N; ++n) {
                const T* p = x.data() + (static_cast<std::size_t>(n) * C + c) * HW;
                for (int i = 0; i < HW; ++i) {
                    const double d = p[i] - m;
                    ss += d * d;
                }
            }
            const double v = ss / static_cast<double>(count);
            mean = static_cast<T>(m);
            var = static_cast<T>(v);
            const double unbiased = ss / static_cast<double>(count - 1);
            running_mean[c] = static_cast<T>(cfg.momentum * running_mean[c] + (1.0 - cfg.momentum) * m);
            running_var[c] = static_cast<T>(cfg.momentum * running_var[c] + (1.0 - cfg.momentum) * unbiased);
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const T is = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + cfg.eps));
        invstd[static_cast<std::size_t>(c)] = is;
        const T g = gamma[c], b = beta[c];
        for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) {
                const T h = (x[off + i] - mean) * is;
                xhat[off + i] = h;
                y[off + i] = g * h + b;
            }
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->invstd = std::move(invstd);
        cache->mode = mode;
    }
    return y;
}

template <typename T>
struct BatchNormGrads {
    Tensor<T> input, gamma, beta;
};

template <typename T>
BatchNormGrads<T> batchnorm2d_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& gy) {
    const Tensor<T>& xhat = cache.xhat;
    if (!xhat.same_shape(gy)) throw ConfigError("batchnorm2d_backward: gradient shape mismatch");
    const int N = gy.dim(0), C = gy.dim(1), HW = gy.dim(2) * gy.dim(3);
    const double count = static_cast<double>(N) * HW;
    BatchNormGrads<T> g{Tensor<T>::like(gy), Tensor<T>({C}), Tensor<T>({C})};
    for (int c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) {
                sum_dy += gy[off + i];
                sum_dy_xhat += static_cast<double>(gy[off + i]) * xhat[off + i];
            }
        }
        g.gamma[c] = static_cast<T>(sum_dy_xhat);
        g.beta[c] = static_cast<T>(sum_dy);
        const double scale = static_cast<double>(gamma[c]) * cache.invstd[static_cast<std::size_t>(c)];
        for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) {
                if (cache.mode == Mode::Train) {
                    g.input[off + i] =
                        static_cast<T>(scale * (gy[off + i] - sum_dy / count - xhat[off + i] * sum_dy_xhat / count));
                } else {
                    g.input[off + i] = static_cast<T>(scale * gy[off + i]);
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// elementwise / pooling / linear

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y = Tensor<T>::like(x);
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return y;
}

/// Gradient of relu given its output (y > 0 marks the active set).
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& gy) {
    Tensor<T> gx = Tensor<T>::like(gy);
    for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] = y[i] > T(0) ? gy[i] : T(0);
    return gx;
}

struct PoolParams {
    int kernel = 3;
    int stride = 2;
    int pad = 1;
};

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, const PoolParams& p, std::vector<std::uint32_t>* argmax = nullptr) {
    require_rank("maxpool2d", x.rank(), 4);
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int oh = (H + 2 * p.pad - p.kernel) / p.stride + 1;
    const int ow = (W + 2 * p.pad - p.kernel) / p.stride + 1;
    if (oh < 1 || ow < 1) throw ConfigError("maxpool2d: input smaller than window");
    Tensor<T> y({N, C, oh, ow});
    if (argmax) argmax->assign(y.numel(), 0);
    std::size_t o = 0;
    for (int nc = 0; nc < N * C; ++nc) {
        const std::size_t base = static_cast<std::size_t>(nc) * H * W;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox, ++o) {
                T best = -std::numeric_limits<T>::infinity();
                std::uint32_t arg = 0;
                for (int i = 0; i < p.kernel; ++i) {
                    const int iy = oy * p.stride - p.pad + i;
                    if (iy < 0 || iy >= H) continue;
                    for (int j = 0; j < p.kernel; ++j) {
                        const int ix = ox * p.stride - p.pad + j;
                        if (ix < 0 || ix >= W) continue;
                        const T v = x[base + static_cast<std::size_t>(iy) * W + ix];
                        if (v > best) {
                            best = v;
                            arg = static_cast<std::uint32_t>(iy * W + ix);
                        }
                    }
                }
                y[o] = best;
                if (argmax) (*argmax)[o] = arg;
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& x_shape, const std::vector<std::uint32_t>& argmax, const Tensor<T>& gy) {
    Tensor<T> gx(x_shape);
    const int H = x_shape[2], W = x_shape[3];
    const std::size_t plane_out = static_cast<std::size_t>(gy.dim(2)) * gy.dim(3);
    for (std::size_t o = 0; o < gy.numel(); ++o) {
        const std::size_t nc = o / plane_out;
        gx[nc * H * W + argmax[o]] += gy[o];
    }
    return gx;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    require_rank("global_avg_pool", x.rank(), 4);
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor<T> y({N, C});
    for (int nc = 0; nc < N * C; ++nc) {
        double s = 0.0;
        const T* p = x.data() + static_cast<std::size_t>(nc) * HW;
        for (int i = 0; i < HW; ++i) s += p[i];
        y[static_cast<std::size_t>(nc)] = static_cast<T>(s / HW);
    }
    return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& x_shape, const Tensor<T>& gy) {
    Tensor<T> gx(x_shape);
    const int HW = x_shape[2] * x_shape[3];
    for (std::size_t nc = 0; nc < gy.numel(); ++nc) {
        const T v = gy[nc] / static_cast<T>(HW);
        std::fill_n(gx.data() + nc * HW, HW, v);
    }
    return gx;
}

/// y[N,K] = x[N,C] * weight[K,C]^T + bias[K]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    require_rank("linear", x.rank(), 2);
    require_rank("linear", weight.rank(), 2);
    const int N = x.dim(0), C = x.dim(1), K = weight.dim(0);
    if (weight.dim(1) != C || bias.rank() != 1 || bias.dim(0) != K) throw ConfigError("linear: shape mismatch");
    Tensor<T> y({N, K});
    MatMap<T> ym(y.data(), N, K);
    ym.noalias() = ConstMatMap<T>(x.data(), N, C) * ConstMatMap<T>(weight.data(), K, C).transpose();
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) y[static_cast<std::size_t>(n) * K + k] += bias[k];
    return y;
}

template <typename T>
struct LinearGrads {
    Tensor<T> input, weight, bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& gy) {
    const int N = x.dim(0), C = x.dim(1), K = weight.dim(0);
    if (gy.shape() != Shape{N, K}) throw ConfigError("linear_backward: gradient shape mismatch");
    LinearGrads<T> g{Tensor<T>::like(x), Tensor<T>::like(weight), Tensor<T>({K})};
    ConstMatMap<T> gym(gy.data(), N, K);
    MatMap<T>(g.input.data(), N, C).noalias() = gym * ConstMatMap<T>(weight.data(), K, C);
    MatMap<T>(g.weight.data(), K, C).noalias() = gym.transpose() * ConstMatMap<T>(x.data(), N, C);
    for (int k = 0; k < K; ++k) g.bias[k] = gym.col(k).sum();
    return g;
}

// ---------------------------------------------------------------------------
// resizing

namespace detail {

struct Taps {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

// Half-pixel centres: src = (i + 0.5) * in / out - 0.5, clamped to [0, in - 1].
inline Taps bilinear_taps(int in, int out) {
    Taps t;
    t.lo.resize(static_cast<std::size_t>(out));
    t.hi.resize(static_cast<std::size_t>(out));
    t.frac.resize(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const int lo = static_cast<int>(std::floor(src));
        t.lo[static_cast<std::size_t>(i)] = lo;
        t.hi[static_cast<std::size_t>(i)] = std::min(lo + 1, in - 1);
        t.frac[static_cast<std::size_t>(i)] = src - lo;
    }
    return t;
}

}  // namespace detail

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w) {
    require_rank("bilinear_resize", x.rank(), 4);
    if (out_h < 1 || out_w < 1) throw ConfigError("bilinear_resize: output size must be >= 1");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto ty = detail::bilinear_taps(H, out_h);
    const auto tx = detail::bilinear_taps(W, out_w);
    Tensor<T> y({N, C, out_h, out_w});
    for (int nc = 0; nc < N * C; ++nc) {
        const T* src = x.data() + static_cast<std::size_t>(nc) * H * W;
        T* dst = y.data() + static_cast<std::size_t>(nc) * out_h * out_w;
        for (int i = 0; i < out_h; ++i) {
            const T fy = static_cast<T>(ty.frac[static_cast<std::size_t>(i)]);
            const T* r0 = src + static_cast<std::size_t>(ty.lo[static_cast<std::size_t>(i)]) * W;
            const T* r1 = src + static_cast<std::size_t>(ty.hi[static_cast<std::size_t>(i)]) * W;
            for (int j = 0; j < out_w; ++j) {
                const auto jj = static_cast<std::size_t>(j);
                const T fx = static_cast<T>(tx.frac[jj]);
                const T top = (T(1) - fx) * r0[tx.lo[jj]] + fx * r0[tx.hi[jj]];
                const T bot = (T(1) - fx) * r1[tx.lo[jj]] + fx * r1[tx.hi[jj]];
                dst[static_cast<std::size_t>(i) * out_w + j] = (T(1) - fy) * top + fy * bot;
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Shape& x_shape, const Tensor<T>& gy) {
    const int N = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3];
    const int out_h = gy.dim(2), out_w = gy.dim(3);
    const auto ty = detail::bilinear_taps(H, out_h);
    const auto tx = detail::bilinear_taps(W, out_w);
    Tensor<T> gx(x_shape);
    for (int nc = 0; nc < N * C; ++nc) {
        T* dst = gx.data() + static_cast<std::size_t>(nc) * H * W;
        const T* src = gy.data() + static_cast<std::size_t>(nc) * out_h * out_w;
        for (int i = 0; i < out_h; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            const T fy = static_cast<T>(ty.frac[ii]);
            T* r0 = dst + static_cast<std::size_t>(ty.lo[ii]) * W;
            T* r1 = dst + static_cast<std::size_t>(ty.hi[ii]) * W;
            for (int j = 0; j < out_w; ++j) {
                const auto jj = static_cast<std::size_t>(j);
                const T fx = static_cast<T>(tx.frac[jj]);
                const T g = src[ii * out_w + jj];
                r0[tx.lo[jj]] += (T(1) - fy) * (T(1) - fx) * g;
                r0[tx.hi[jj]] += (T(1) - fy) * fx * g;
                r1[tx.lo[jj]] += fy * (T(1) - fx) * g;
                r1[tx.hi[jj]] += fy * fx * g;
            }
        }
    }
    return gx;
}

/// Box-filter reduction by an integer factor (mean over factor x factor blocks).
template <typename T>
Tensor<T> area_downsample(const Tensor<T>& x, int factor) {
    require_rank("area_downsample", x.rank(), 4);
    if (factor < 1 || x.dim(2) % factor || x.dim(3) % factor) {
        throw ConfigError("area_downsample: extent must be divisible by factor");
    }
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int oh = H / factor, ow = W / factor;
    Tensor<T> y({N, C, oh, ow});
    const double inv = 1.0 / (factor * factor);
    for (int nc = 0; nc < N * C; ++nc) {
        const T* src = x.data() + static_cast<std::size_t>(nc) * H * W;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                double s = 0.0;
                for (int a = 0; a < factor; ++a)
                    for (int b = 0; b < factor; ++b) s += src[static_cast<std::size_t>(i * factor + a) * W + j * factor + b];
                y[(static_cast<std::size_t>(nc) * oh + i) * ow + j] = static_cast<T>(s * inv);
            }
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// sigmoid and loss

template <typename T>
T sigmoid(T score) {
    if (score >= T(0)) {
        const T e = std::exp(-score);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(score);
    return e / (T(1) + e);
}

template <typename T>
T sigmoid_grad(T score) {
    const T p = sigmoid(score);
    return p * (T(1) - p);
}

template <typename T>
struct CrossEntropyResult {
    T loss = T(0);                 // mean over N*H*W
    std::vector<double> per_sample;  // mean over H*W for each n
    Tensor<T> grad;                // d loss / d logits, empty unless requested
};

/// Pixel-averaged softmax cross-entropy with class-index labels (length N*H*W, values < C).
template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                                            bool want_grad) {
    require_rank("softmax_cross_entropy", logits.rank(), 4);
    const int N = logits.dim(0), C = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
    if (labels.size() != static_cast<std::size_t>(N) * HW) {
        throw ValidationError("softmax_cross_entropy: label count " + std::to_string(labels.size()) +
                              " does not match logits " + shape_str(logits.shape()));
    }
    CrossEntropyResult<T> r;
    r.per_sample.assign(static_cast<std::size_t>(N), 0.0);
    if (want_grad) r.grad = Tensor<T>::like(logits);
    const double inv_total = 1.0 / (static_cast<double>(N) * HW);
    std::vector<double> prob(static_cast<std::size_t>(C));
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        const T* base = logits.data() + static_cast<std::size_t>(n) * C * HW;
        double sample = 0.0;
        for (int j = 0; j < HW; ++j) {
            const int label = labels[static_cast<std::size_t>(n) * HW + j];
            if (label >= C) throw ValidationError("softmax_cross_entropy: label index out of range");
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(base[static_cast<std::size_t>(c) * HW + j]));
            double z = 0.0;
            for (int c = 0; c < C; ++c) {
                prob[static_cast<std::size_t>(c)] = std::exp(base[static_cast<std::size_t>(c) * HW + j] - mx);
                z += prob[static_cast<std::size_t>(c)];
            }
            const double lse = mx + std::log(z);
            sample += lse - base[static_cast<std::size_t>(label) * HW + j];
            if (want_grad) {
                T* g = r.grad.data() + static_cast<std::size_t>(n) * C * HW;
                for (int c = 0; c < C; ++c) {
                    const double pc = prob[static_cast<std::size_t>(c)] / z - (c == label ? 1.0 : 0.0);
                    g[static_cast<std::size_t>(c) * HW + j] = static_cast<T>(pc * inv_total);
                }
            }
        }
        r.per_sample[static_cast<std::size_t>(n)] = sample / HW;
        total += sample;
    }
    r.loss = static_cast<T>(total * inv_total);
    return r;
}

/// Converts a one-hot label tensor [N,C,H,W] to class indices, rejecting anything not one-hot.
template <typename T>
std::vector<std::uint8_t> one_hot_to_indices(const Tensor<T>& one_hot) {
    require_rank("one_hot_to_indices", one_hot.rank(), 4);
    const int N = one_hot.dim(0), C = one_hot.dim(1), HW = one_hot.dim(2) * one_hot.dim(3);
    std::vector<std::uint8_t> idx(static_cast<std::size_t>(N) * HW);
    for (int n = 0; n < N; ++n) {
        for (int j = 0; j < HW; ++j) {
            int hot = -1;
            for (int c = 0; c < C; ++c) {
                const T v = one_hot[(static_cast<std::size_t>(n) * C + c) * HW + j];
                if (v == T(1)) {
                    if (hot >= 0) throw ValidationError("labels are not one-hot: several ones at one pixel");
                    hot = c;
                } else if (v != T(0)) {
                    throw ValidationError("labels are not one-hot: entries must be 0 or 1");
                }
            }
            if (hot < 0) throw ValidationError("labels are not one-hot: pixel without a class");
            idx[static_cast<std::size_t>(n) * HW + j] = static_cast<std::uint8_t>(hot);
        }
    }
    return idx;
}

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy_map(const Tensor<T>& logits, const Tensor<T>& one_hot, bool want_grad) {
    if (!logits.same_shape(one_hot)) throw ValidationError("softmax_cross_entropy_map: logits/labels shape mismatch");
    const auto idx = one_hot_to_indices(one_hot);
    return softmax_cross_entropy(logits, std::span<const std::uint8_t>(idx), want_grad);
}

/// Per-pixel argmax over channels of one sample of [N,C,H,W].
template <typename T>
IntMask argmax_channels(const Tensor<T>& logits, int n) {
    const int C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    IntMask m(H, W);
    const std::size_t HW = static_cast<std::size_t>(H) * W;
    const T* base = logits.data() + static_cast<std::size_t>(n) * C * HW;
    for (std::size_t j = 0; j < HW; ++j) {
        int best = 0;
        for (int c = 1; c < C; ++c)
            if (base[c * HW + j] > base[static_cast<std::size_t>(best) * HW + j]) best = c;
        m.data[j] = static_cast<std::uint8_t>(best);
    }
    return m;
}

}  // namespace razn::ops
