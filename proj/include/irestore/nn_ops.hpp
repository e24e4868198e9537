#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include "irestore/tensor.hpp"

namespace irestore {

namespace detail {

inline void check_nchw(const std::vector<int>& s, const char* op) {
    if (s.size() != 4)
        throw std::invalid_argument(std::string(op) + ": expected a 4-D NCHW tensor, got " + shape_str(s));
}

// Valid output range for ox given ix = ox*stride + k - pad must land in [0, extent).
inline void conv_ox_range(int extent, int out_extent, int stride, int pad, int k, int& lo, int& hi) {
    int num = pad - k;
    lo = num <= 0 ? 0 : (num + stride - 1) / stride;
    hi = std::min(out_extent, (extent - 1 - k + pad) / stride + 1);
    if (hi < lo) hi = lo;
}

}  // namespace detail

// Same data, new shape, proper graph node.
template <typename T>
TensorT<T> reshape(const TensorT<T>& x, std::vector<int> new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                                    " changes element count");
    NodeBuilder<T> nb;
    nb.consume(x);
    TensorT<T> out = TensorT<T>::from_vector(std::move(new_shape), x.data());
    nb.adopt(out);
    nb.finish(out, "reshape", [gx = x.grad_ptr(), go = out.grad_ptr()]() {
        if (!gx) return;
        const auto& g = *go;
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    });
    return out;
}

// 2-D cross-correlation, NCHW input against OIHW kernel.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, int stride, int padding) {
    detail::check_nchw(input.shape(), "conv2d input");
    detail::check_nchw(kernel.shape(), "conv2d kernel");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be nonnegative");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int O = kernel.dim(0), I = kernel.dim(1), KH = kernel.dim(2), KW = kernel.dim(3);
    if (C != I)
        throw std::invalid_argument("conv2d: input channels " + std::to_string(C) +
                                    " != kernel input channels " + std::to_string(I));
    const int OH = (H + 2 * padding - KH) / stride + 1;
    const int OW = (W + 2 * padding - KW) / stride + 1;
    if (H + 2 * padding < KH || W + 2 * padding < KW || OH <= 0 || OW <= 0)
        throw std::invalid_argument("conv2d: non-positive output extent for input " + shape_str(input.shape()) +
                                    " kernel " + shape_str(kernel.shape()));

    NodeBuilder<T> nb;
    nb.consume(input);
    nb.consume(kernel);
    TensorT<T> out = nb.out_like({N, O, OH, OW});

    const T* in = input.data().data();
    const T* wt = kernel.data().data();
    T* ov = out.data().data();
    for (int n = 0; n < N; ++n) {
        for (int oc = 0; oc < O; ++oc) {
            T* out_plane = ov + (static_cast<std::size_t>(n) * O + oc) * OH * OW;
            for (int ic = 0; ic < C; ++ic) {
                const T* in_plane = in + (static_cast<std::size_t>(n) * C + ic) * H * W;
                const T* w_k = wt + (static_cast<std::size_t>(oc) * I + ic) * KH * KW;
                for (int ky = 0; ky < KH; ++ky) {
                    for (int kx = 0; kx < KW; ++kx) {
                        const T wv = w_k[ky * KW + kx];
                        int lo, hi;
                        detail::conv_ox_range(W, OW, stride, padding, kx, lo, hi);
                        for (int oy = 0; oy < OH; ++oy) {
                            const int iy = oy * stride + ky - padding;
                            if (iy < 0 || iy >= H) continue;
                            const T* in_row = in_plane + static_cast<std::size_t>(iy) * W;
                            T* out_row = out_plane + static_cast<std::size_t>(oy) * OW;
                            if (stride == 1) {
                                const int off = kx - padding;
                                for (int ox = lo; ox < hi; ++ox) out_row[ox] += wv * in_row[ox + off];
                            } else {
                                for (int ox = lo; ox < hi; ++ox)
                                    out_row[ox] += wv * in_row[ox * stride + kx - padding];
                            }
                        }
                    }
                }
            }
        }
    }

    nb.finish(out, "conv2d",
              [gi = input.grad_ptr(), gw = kernel.grad_ptr(), id = input.data_ptr(), wd = kernel.data_ptr(),
               go = out.grad_ptr(), N, C, H, W, O, KH, KW, OH, OW, stride, padding]() {
                  const T* g = go->data();
                  if (gi) {
                      const T* wt = wd->data();
                      T* gin = gi->data();
                      for (int n = 0; n < N; ++n) {
                          for (int ic = 0; ic < C; ++ic) {
                              T* gin_plane = gin + (static_cast<std::size_t>(n) * C + ic) * H * W;
                              for (int oc = 0; oc < O; ++oc) {
                                  const T* g_plane = g + (static_cast<std::size_t>(n) * O + oc) * OH * OW;
                                  const T* w_k = wt + (static_cast<std::size_t>(oc) * C + ic) * KH * KW;
                                  for (int ky = 0; ky < KH; ++ky) {
                                      for (int kx = 0; kx < KW; ++kx) {
                                          const T wv = w_k[ky * KW + kx];
                                          int lo, hi;
                                          detail::conv_ox_range(W, OW, stride, padding, kx, lo, hi);
                                          for (int oy = 0; oy < OH; ++oy) {
                                              const int iy = oy * stride + ky - padding;
                                              if (iy < 0 || iy >= H) continue;
                                              T* gin_row = gin_plane + static_cast<std::size_t>(iy) * W;
                                              const T* g_row = g_plane + static_cast<std::size_t>(oy) * OW;
                                              if (stride == 1) {
                                                  const int off = kx - padding;
                                                  for (int ox = lo; ox < hi; ++ox) gin_row[ox + off] += wv * g_row[ox];
                                              } else {
                                                  for (int ox = lo; ox < hi; ++ox)
                                                      gin_row[ox * stride + kx - padding] += wv * g_row[ox];
                                              }
                                          }
                                      }
                                  }
                              }
                          }
                      }
                  }
                  if (gw) {
                      const T* in = id->data();
                      T* gwt = gw->data();
                      for (int oc = 0; oc < O; ++oc) {
                          for (int ic = 0; ic < C; ++ic) {
                              T* gw_k = gwt + (static_cast<std::size_t>(oc) * C + ic) * KH * KW;
                              for (int ky = 0; ky < KH; ++ky) {
                                  for (int kx = 0; kx < KW; ++kx) {
                                      T acc = T(0);
                                      int lo, hi;
                                      detail::conv_ox_range(W, OW, stride, padding, kx, lo, hi);
                                      for (int n = 0; n < N; ++n) {
                                          const T* in_plane = in + (static_cast<std::size_t>(n) * C + ic) * H * W;
                                          const T* g_plane = g + (static_cast<std::size_t>(n) * O + oc) * OH * OW;
                                          for (int oy = 0; oy < OH; ++oy) {
                                              const int iy = oy * stride + ky - padding;
                                              if (iy < 0 || iy >= H) continue;
                                              const T* in_row = in_plane + static_cast<std::size_t>(iy) * W;
                                              const T* g_row = g_plane + static_cast<std::size_t>(oy) * OW;
                                              if (stride == 1) {
                                                  const int off = kx - padding;
                                                  for (int ox = lo; ox < hi; ++ox) acc += g_row[ox] * in_row[ox + off];
                                              } else {
                                                  for (int ox = lo; ox < hi; ++ox)
                                                      acc += g_row[ox] * in_row[ox * stride + kx - padding];
                                              }
                                          }
                                      }
                                      gw_k[ky * KW + kx] += acc;
                                  }
                              }
                          }
                      }
                  }
              });
    return out;
}

// Per-channel bias for NCHW tensors, per-column bias for 2-D tensors.
template <typename T>
TensorT<T> bias_add(const TensorT<T>& x, const TensorT<T>& b) {
    if (b.ndim() != 1) throw std::invalid_argument("bias_add: bias must be 1-D, got " + shape_str(b.shape()));
    NodeBuilder<T> nb;
    nb.consume(x);
    nb.consume(b);
    TensorT<T> out = nb.out_like(x.shape());
    const auto& xv = x.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    if (x.ndim() == 4) {
        const int N = x.dim(0), C = x.dim(1);
        const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
        if (C != b.dim(0)) throw std::invalid_argument("bias_add: channel count mismatch");
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
                const T bias = bv[static_cast<std::size_t>(c)];
                for (std::size_t i = 0; i < plane; ++i) ov[base + i] = xv[base + i] + bias;
            }
        nb.finish(out, "bias_add", [gx = x.grad_ptr(), gb = b.grad_ptr(), go = out.grad_ptr(), N, C, plane]() {
            const auto& g = *go;
            if (gx)
                for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
            if (gb) {
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
                        T acc = T(0);
                        for (std::size_t i = 0; i < plane; ++i) acc += g[base + i];
                        (*gb)[static_cast<std::size_t>(c)] += acc;
                    }
            }
        });
    } else if (x.ndim() == 2) {
        const int N = x.dim(0), D = x.dim(1);
        if (D != b.dim(0)) throw std::invalid_argument("bias_add: column count mismatch");
        for (int n = 0; n < N; ++n)
            for (int d = 0; d < D; ++d) ov[static_cast<std::size_t>(n) * D + d] = xv[static_cast<std::size_t>(n) * D + d] + bv[static_cast<std::size_t>(d)];
        nb.finish(out, "bias_add", [gx = x.grad_ptr(), gb = b.grad_ptr(), go = out.grad_ptr(), N, D]() {
            const auto& g = *go;
            if (gx)
                for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
            if (gb)
                for (int n = 0; n < N; ++n)
                    for (int d = 0; d < D; ++d) (*gb)[static_cast<std::size_t>(d)] += g[static_cast<std::size_t>(n) * D + d];
        });
    } else {
        throw std::invalid_argument("bias_add: expected 2-D or 4-D input, got " + shape_str(x.shape()));
    }
    return out;
}

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw std::invalid_argument("matmul: expected 2-D operands, got " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    const int M = a.dim(0), K = a.dim(1), K2 = b.dim(0), N = b.dim(1);
    if (K != K2)
        throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    NodeBuilder<T> nb;
    nb.consume(a);
    nb.consume(b);
    TensorT<T> out = nb.out_like({M, N});
    const T* av = a.data().data();
    const T* bv = b.data().data();
    T* ov = out.data().data();
    for (int i = 0; i < M; ++i)
        for (int k = 0; k < K; ++k) {
            const T s = av[static_cast<std::size_t>(i) * K + k];
            const T* brow = bv + static_cast<std::size_t>(k) * N;
            T* orow = ov + static_cast<std::size_t>(i) * N;
            for (int j = 0; j < N; ++j) orow[j] += s * brow[j];
        }
    nb.finish(out, "matmul",
              [ga = a.grad_ptr(), gb = b.grad_ptr(), ad = a.data_ptr(), bd = b.data_ptr(), go = out.grad_ptr(), M, K,
               N]() {
                  const T* g = go->data();
                  if (ga) {
                      // gA = g . B^T
                      const T* bv = bd->data();
                      T* gav = ga->data();
                      for (int i = 0; i < M; ++i)
                          for (int k = 0; k < K; ++k) {
                              T acc = T(0);
                              const T* grow = g + static_cast<std::size_t>(i) * N;
                              const T* brow = bv + static_cast<std::size_t>(k) * N;
                              for (int j = 0; j < N; ++j) acc += grow[j] * brow[j];
                              gav[static_cast<std::size_t>(i) * K + k] += acc;
                          }
                  }
                  if (gb) {
                      // gB = A^T . g
                      const T* av = ad->data();
                      T* gbv = gb->data();
                      for (int k = 0; k < K; ++k)
                          for (int i = 0; i < M; ++i) {
                              const T s = av[static_cast<std::size_t>(i) * K + k];
                              const T* grow = g + static_cast<std::size_t>(i) * N;
                              T* gbrow = gbv + static_cast<std::size_t>(k) * N;
                              for (int j = 0; j < N; ++j) gbrow[j] += s * grow[j];
                          }
                  }
              });
    return out;
}

// 2x2 average pooling; halves both spatial extents.
template <typename T>
TensorT<T> avg_pool2(const TensorT<T>& x) {
    detail::check_nchw(x.shape(), "avg_pool2");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("avg_pool2: spatial extents must be even, got " + shape_str(x.shape()));
    const int OH = H / 2, OW = W / 2;
    NodeBuilder<T> nb;
    nb.consume(x);
    TensorT<T> out = nb.out_like({N, C, OH, OW});
    const T* in = x.data().data();
    T* ov = out.data().data();
    for (int p = 0; p < N * C; ++p) {
        const T* ip = in + static_cast<std::size_t>(p) * H * W;
        T* op = ov + static_cast<std::size_t>(p) * OH * OW;
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                const T* r0 = ip + static_cast<std::size_t>(2 * oy) * W + 2 * ox;
                const T* r1 = r0 + W;
                op[static_cast<std::size_t>(oy) * OW + ox] = (r0[0] + r0[1] + r1[0] + r1[1]) * T(0.25);
            }
    }
    nb.finish(out, "avg_pool2", [gx = x.grad_ptr(), go = out.grad_ptr(), N, C, H, W, OH, OW]() {
        if (!gx) return;
        const T* g = go->data();
        T* gv = gx->data();
        for (int p = 0; p < N * C; ++p) {
            T* gp = gv + static_cast<std::size_t>(p) * H * W;
            const T* op = g + static_cast<std::size_t>(p) * OH * OW;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const T s = op[static_cast<std::size_t>(oy) * OW + ox] * T(0.25);
                    T* r0 = gp + static_cast<std::size_t>(2 * oy) * W + 2 * ox;
                    T* r1 = r0 + W;
                    r0[0] += s;
                    r0[1] += s;
                    r1[0] += s;
                    r1[1] += s;
                }
        }
    });
    return out;
}

namespace detail {

struct LinearTap2 {
    int i0, i1;
    double w0, w1;
};

// Half-pixel-center bilinear doubling along one axis.
inline std::vector<LinearTap2> bilinear_up2_taps(int n) {
    std::vector<LinearTap2> taps(static_cast<std::size_t>(2 * n));
    for (int o = 0; o < 2 * n; ++o) {
        const double src = (o + 0.5) * 0.5 - 0.5;
        int i0 = static_cast<int>(std::floor(src));
        const double f = src - i0;
        int i1 = i0 + 1;
        i0 = std::clamp(i0, 0, n - 1);
        i1 = std::clamp(i1, 0, n - 1);
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - f, f};
    }
    return taps;
}

}  // namespace detail

// Bilinear upsampling by 2 on both spatial axes.
template <typename T>
TensorT<T> bilinear_up2(const TensorT<T>& x) {
    detail::check_nchw(x.shape(), "bilinear_up2");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OH = 2 * H, OW = 2 * W;
    const auto ty = detail::bilinear_up2_taps(H);
    const auto tx = detail::bilinear_up2_taps(W);
    NodeBuilder<T> nb;
    nb.consume(x);
    TensorT<T> out = nb.out_like({N, C, OH, OW});
    const T* in = x.data().data();
    T* ov = out.data().data();
    for (int p = 0; p < N * C; ++p) {
        const T* ip = in + static_cast<std::size_t>(p) * H * W;
        T* op = ov + static_cast<std::size_t>(p) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
            const auto& y = ty[static_cast<std::size_t>(oy)];
            const T* r0 = ip + static_cast<std::size_t>(y.i0) * W;
            const T* r1 = ip + static_cast<std::size_t>(y.i1) * W;
            T* orow = op + static_cast<std::size_t>(oy) * OW;
            for (int ox = 0; ox < OW; ++ox) {
                const auto& xt = tx[static_cast<std::size_t>(ox)];
                const double v0 = y.w0 * (xt.w0 * r0[xt.i0] + xt.w1 * r0[xt.i1]);
                const double v1 = y.w1 * (xt.w0 * r1[xt.i0] + xt.w1 * r1[xt.i1]);
                orow[ox] = static_cast<T>(v0 + v1);
            }
        }
    }
    nb.finish(out, "bilinear_up2", [gx = x.grad_ptr(), go = out.grad_ptr(), N, C, H, W, OH, OW, ty, tx]() {
        if (!gx) return;
        const T* g = go->data();
        T* gv = gx->data();
        for (int p = 0; p < N * C; ++p) {
            T* gp = gv + static_cast<std::size_t>(p) * H * W;
            const T* op = g + static_cast<std::size_t>(p) * OH * OW;
            for (int oy = 0; oy < OH; ++oy) {
                const auto& y = ty[static_cast<std::size_t>(oy)];
                const T* grow = op + static_cast<std::size_t>(oy) * OW;
                T* r0 = gp + static_cast<std::size_t>(y.i0) * W;
                T* r1 = gp + static_cast<std::size_t>(y.i1) * W;
                for (int ox = 0; ox < OW; ++ox) {
                    const auto& xt = tx[static_cast<std::size_t>(ox)];
                    const T gg = grow[ox];
                    r0[xt.i0] += static_cast<T>(y.w0 * xt.w0) * gg;
                    r0[xt.i1] += static_cast<T>(y.w0 * xt.w1) * gg;
                    r1[xt.i0] += static_cast<T>(y.w1 * xt.w0) * gg;
                    r1[xt.i1] += static_cast<T>(y.w1 * xt.w1) * gg;
                }
            }
        }
    });
    return out;
}

enum class ResampleDirection { down, up };

// Spec'd scale-2 resampler: down is 2x2 average pooling, up is bilinear.
template <typename T>
TensorT<T> resample2(const TensorT<T>& x, ResampleDirection dir) {
    return dir == ResampleDirection::down ? avg_pool2(x) : bilinear_up2(x);
}

namespace detail {

struct CubicTaps {
    std::array<int, 4> idx;
    std::array<double, 4> w;
};

// Keys bicubic kernel, a = -0.5.
inline double cubic_weight(double t) {
    t = std::abs(t);
    if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
    if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
    return 0.0;
}

inline std::vector<CubicTaps> bicubic_taps(int in_n, int out_n) {
    std::vector<CubicTaps> taps(static_cast<std::size_t>(out_n));
    const double scale = static_cast<double>(in_n) / out_n;
    for (int o = 0; o < out_n; ++o) {
        const double src = (o + 0.5) * scale - 0.5;
        const int base = static_cast<int>(std::floor(src)) - 1;
        CubicTaps t{};
        for (int k = 0; k < 4; ++k) {
            t.idx[static_cast<std::size_t>(k)] = std::clamp(base + k, 0, in_n - 1);
            t.w[static_cast<std::size_t>(k)] = cubic_weight(src - (base + k));
        }
        taps[static_cast<std::size_t>(o)] = t;
    }
    return taps;
}

}  // namespace detail

// Separable bicubic resize to an arbitrary spatial extent. A fixed linear
// map, so backward scatters with the same tap weights.
template <typename T>
TensorT<T> bicubic_resize(const TensorT<T>& x, int out_h, int out_w) {
    detail::check_nchw(x.shape(), "bicubic_resize");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("bicubic_resize: output extents must be positive");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto ty = detail::bicubic_taps(H, out_h);
    const auto tx = detail::bicubic_taps(W, out_w);
    NodeBuilder<T> nb;
    nb.consume(x);
    TensorT<T> out = nb.out_like({N, C, out_h, out_w});
    const T* in = x.data().data();
    T* ov = out.data().data();
    std::vector<double> mid(static_cast<std::size_t>(H) * out_w);
    for (int p = 0; p < N * C; ++p) {
        const T* ip = in + static_cast<std::size_t>(p) * H * W;
        // width pass
        for (int y = 0; y < H; ++y) {
            const T* row = ip + static_cast<std::size_t>(y) * W;
            double* mrow = mid.data() + static_cast<std::size_t>(y) * out_w;
            for (int ox = 0; ox < out_w; ++ox) {
                const auto& t = tx[static_cast<std::size_t>(ox)];
                mrow[ox] = t.w[0] * row[t.idx[0]] + t.w[1] * row[t.idx[1]] + t.w[2] * row[t.idx[2]] +
                           t.w[3] * row[t.idx[3]];
            }
        }
        // height pass
        T* op = ov + static_cast<std::size_t>(p) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const auto& t = ty[static_cast<std::size_t>(oy)];
            const double* m0 = mid.data() + static_cast<std::size_t>(t.idx[0]) * out_w;
            const double* m1 = mid.data() + static_cast<std::size_t>(t.idx[1]) * out_w;
            const double* m2 = mid.data() + static_cast<std::size_t>(t.idx[2]) * out_w;
            const double* m3 = mid.data() + static_cast<std::size_t>(t.idx[3]) * out_w;
            T* orow = op + static_cast<std::size_t>(oy) * out_w;
            for (int ox = 0; ox < out_w; ++ox)
                orow[ox] = static_cast<T>(t.w[0] * m0[ox] + t.w[1] * m1[ox] + t.w[2] * m2[ox] + t.w[3] * m3[ox]);
        }
    }
    nb.finish(out, "bicubic_resize", [gx = x.grad_ptr(), go = out.grad_ptr(), N, C, H, W, out_h, out_w, ty, tx]() {
        if (!gx) return;
        const T* g = go->data();
        T* gv = gx->data();
        std::vector<double> mid(static_cast<std::size_t>(H) * out_w);
        for (int p = 0; p < N * C; ++p) {
            std::fill(mid.begin(), mid.end(), 0.0);
            const T* op = g + static_cast<std::size_t>(p) * out_h * out_w;
            // transpose of the height pass
            for (int oy = 0; oy < out_h; ++oy) {
                const auto& t = ty[static_cast<std::size_t>(oy)];
                const T* grow = op + static_cast<std::size_t>(oy) * out_w;
                for (int k = 0; k < 4; ++k) {
                    double* mrow = mid.data() + static_cast<std::size_t>(t.idx[static_cast<std::size_t>(k)]) * out_w;
                    const double wv = t.w[static_cast<std::size_t>(k)];
                    for (int ox = 0; ox < out_w; ++ox) mrow[ox] += wv * grow[ox];
                }
            }
            // transpose of the width pass
            T* gp = gv + static_cast<std::size_t>(p) * H * W;
            for (int y = 0; y < H; ++y) {
                const double* mrow = mid.data() + static_cast<std::size_t>(y) * out_w;
                T* grow = gp + static_cast<std::size_t>(y) * W;
                for (int ox = 0; ox < out_w; ++ox) {
                    const auto& t = tx[static_cast<std::size_t>(ox)];
                    for (int k = 0; k < 4; ++k)
                        grow[t.idx[static_cast<std::size_t>(k)]] +=
                            static_cast<T>(t.w[static_cast<std::size_t>(k)] * mrow[ox]);
                }
            }
        }
    });
    return out;
}

// NCHW -> NC mean over the spatial extent.
template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
    detail::check_nchw(x.shape(), "global_avg_pool");
    const int N = x.dim(0), C = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    NodeBuilder<T> nb;
    nb.consume(x);
    TensorT<T> out = nb.out_like({N, C});
    const auto& xv = x.data();
    auto& ov = out.data();
    const T inv = T(1) / static_cast<T>(plane);
    for (int p = 0; p < N * C; ++p) {
        T acc = T(0);
        const T* ip = xv.data() + static_cast<std::size_t>(p) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += ip[i];
        ov[static_cast<std::size_t>(p)] = acc * inv;
    }
    nb.finish(out, "global_avg_pool", [gx = x.grad_ptr(), go = out.grad_ptr(), N, C, plane, inv]() {
        if (!gx) return;
        const auto& g = *go;
        for (int p = 0; p < N * C; ++p) {
            const T s = g[static_cast<std::size_t>(p)] * inv;
            T* gp = gx->data() + static_cast<std::size_t>(p) * plane;
            for (std::size_t i = 0; i < plane; ++i) gp[i] += s;
        }
    });
    return out;
}

// Concatenate NCHW tensors along the channel axis.
template <typename T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    detail::check_nchw(parts[0].shape(), "concat_channels");
    const int N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
    int C = 0;
    for (const auto& p : parts) {
        detail::check_nchw(p.shape(), "concat_channels");
        if (p.dim(0) != N || p.dim(2) != H || p.dim(3) != W)
            throw std::invalid_argument("concat_channels: incompatible shapes " + shape_str(parts[0].shape()) +
                                        " vs " + shape_str(p.shape()));
        C += p.dim(1);
    }
    NodeBuilder<T> nb;
    for (const auto& p : parts) nb.consume(p);
    TensorT<T> out = nb.out_like({N, C, H, W});
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    auto& ov = out.data();
    std::vector<int> chans;
    std::vector<std::shared_ptr<std::vector<T>>> grads;
    int coff = 0;
    for (const auto& p : parts) {
        const int pc = p.dim(1);
        const auto& pv = p.data();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < pc; ++c) {
                const T* src = pv.data() + (static_cast<std::size_t>(n) * pc + c) * plane;
                T* dst = ov.data() + (static_cast<std::size_t>(n) * C + coff + c) * plane;
                std::copy(src, src + plane, dst);
            }
        chans.push_back(pc);
        grads.push_back(p.grad_ptr());
        coff += pc;
    }
    nb.finish(out, "concat_channels", [grads, chans, go = out.grad_ptr(), N, C, plane]() {
        const T* g = go->data();
        int coff = 0;
        for (std::size_t k = 0; k < grads.size(); ++k) {
            const int pc = chans[k];
            if (grads[k]) {
                T* dst = grads[k]->data();
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < pc; ++c) {
                        const T* src = g + (static_cast<std::size_t>(n) * C + coff + c) * plane;
                        T* drow = dst + (static_cast<std::size_t>(n) * pc + c) * plane;
                        for (std::size_t i = 0; i < plane; ++i) drow[i] += src[i];
                    }
            }
            coff += pc;
        }
    });
    return out;
}

// Softmax along the last axis.
template <typename T>
TensorT<T> softmax_lastdim(const TensorT<T>& x) {
    if (x.ndim() < 1) throw std::invalid_argument("softmax: rank-0 input");
    const int L = x.dim(x.ndim() - 1);
    if (L < 1) throw std::invalid_argument("softmax over empty axis");
    const std::int64_t rows = x.numel() / L;
    NodeBuilder<T> nb;
    nb.consume(x);
    TensorT<T> out = nb.out_like(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = xv.data() + r * L;
        T* yr = ov.data() + r * L;
        T mx = xr[0];
        for (int i = 1; i < L; ++i) mx = std::max(mx, xr[i]);
        T sum = T(0);
        for (int i = 0; i < L; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            sum += yr[i];
        }
        const T inv = T(1) / sum;
        for (int i = 0; i < L; ++i) yr[i] *= inv;
    }
    nb.finish(out, "softmax", [gx = x.grad_ptr(), od = out.data_ptr(), go = out.grad_ptr(), rows, L]() {
        if (!gx) return;
        const auto& g = *go;
        const auto& y = *od;
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* yr = y.data() + r * L;
            const T* gr = g.data() + r * L;
            T dot = T(0);
            for (int i = 0; i < L; ++i) dot += gr[i] * yr[i];
            T* gxr = gx->data() + r * L;
            for (int i = 0; i < L; ++i) gxr[i] += yr[i] * (gr[i] - dot);
        }
    });
    return out;
}

// Running statistics owned by a batch-norm layer; plain buffers, never
// differentiated through.
template <typename T>
struct BnStats {
    std::vector<T> mean, var;
    explicit BnStats(int channels = 0)
        : mean(static_cast<std::size_t>(channels), T(0)), var(static_cast<std::size_t>(channels), T(1)) {}
};

// Batch normalization over NCHW with an optional pre-affine scale; the
// threshold-dependent variant passes pre_scale = v_th so normalized
// activations sit on the firing-threshold scale before gamma/beta.
template <typename T>
TensorT<T> batch_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      const std::shared_ptr<BnStats<T>>& stats, bool training, T momentum = T(0.1),
                      T eps = T(1e-5), T pre_scale = T(1)) {
    detail::check_nchw(x.shape(), "batch_norm");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C)
        throw std::invalid_argument("batch_norm: affine parameters must have shape (" + std::to_string(C) + ")");
    if (static_cast<int>(stats->mean.size()) != C)
        throw std::invalid_argument("batch_norm: running stats channel mismatch");
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t per_chan = static_cast<std::size_t>(N) * plane;

    NodeBuilder<T> nb;
    nb.consume(x);
    nb.consume(gamma);
    nb.consume(beta);
    TensorT<T> out = nb.out_like(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    const auto& gv = gamma.data();
    const auto& bv = beta.data();

    auto xhat = std::make_shared<std::vector<T>>(xv.size());
    std::vector<T> inv_std(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
        T m, v;
        if (training) {
            T acc = T(0);
            for (int n = 0; n < N; ++n) {
                const T* p = xv.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            }
            m = acc / static_cast<T>(per_chan);
            T acc2 = T(0);
            for (int n = 0; n < N; ++n) {
                const T* p = xv.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const T d = p[i] - m;
                    acc2 += d * d;
                }
            }
            v = acc2 / static_cast<T>(per_chan);
            auto& st = *stats;
            st.mean[static_cast<std::size_t>(c)] = (T(1) - momentum) * st.mean[static_cast<std::size_t>(c)] + momentum * m;
            st.var[static_cast<std::size_t>(c)] = (T(1) - momentum) * st.var[static_cast<std::size_t>(c)] + momentum * v;
        } else {
            m = stats->mean[static_cast<std::size_t>(c)];
            v = stats->var[static_cast<std::size_t>(c)];
        }
        const T istd = T(1) / std::sqrt(v + eps);
        inv_std[static_cast<std::size_t>(c)] = istd;
        const T gmul = gv[static_cast<std::size_t>(c)] * pre_scale;
        const T badd = bv[static_cast<std::size_t>(c)];
        for (int n = 0; n < N; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const T xh = (xv[base + i] - m) * istd;
                (*xhat)[base + i] = xh;
                ov[base + i] = gmul * xh + badd;
            }
        }
    }

    nb.finish(out, "batch_norm",
              [gx = x.grad_ptr(), gg = gamma.grad_ptr(), gb = beta.grad_ptr(), gd = gamma.data_ptr(), xhat,
               go = out.grad_ptr(), inv_std, N, C, plane, per_chan, pre_scale, training]() {
                  const auto& g = *go;
                  for (int c = 0; c < C; ++c) {
                      const T gmul = (*gd)[static_cast<std::size_t>(c)] * pre_scale;
                      T sum_g = T(0), sum_gx = T(0);
                      for (int n = 0; n < N; ++n) {
                          const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
                          for (std::size_t i = 0; i < plane; ++i) {
                              sum_g += g[base + i];
                              sum_gx += g[base + i] * (*xhat)[base + i];
                          }
                      }
                      if (gg) (*gg)[static_cast<std::size_t>(c)] += pre_scale * sum_gx;
                      if (gb) (*gb)[static_cast<std::size_t>(c)] += sum_g;
                      if (gx) {
                          const T istd = inv_std[static_cast<std::size_t>(c)];
                          const T inv_m = T(1) / static_cast<T>(per_chan);
                          for (int n = 0; n < N; ++n) {
                              const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
                              for (std::size_t i = 0; i < plane; ++i) {
                                  if (training) {
                                      (*gx)[base + i] += gmul * istd *
                                                         (g[base + i] - inv_m * sum_g -
                                                          (*xhat)[base + i] * inv_m * sum_gx);
                                  } else {
                                      (*gx)[base + i] += gmul * istd * g[base + i];
                                  }
                              }
                          }
                      }
                  }
              });
    return out;
}

}  // namespace irestore
