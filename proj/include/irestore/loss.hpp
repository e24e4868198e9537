#pragma once

#include <cmath>
#include <stdexcept>

#include "irestore/nn_ops.hpp"
#include "irestore/tensor.hpp"

namespace irestore {

struct LossWeights {
    double alpha = 0.75;
    double beta = 1.1;
};

namespace detail {

// Normalized 2-d Gaussian as a plain (untracked) conv kernel.
template <typename T>
TensorT<T> ssim_window(int k, double sigma) {
    std::vector<T> w(static_cast<std::size_t>(k) * k);
    const double c = (k - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            const double v = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2.0 * sigma * sigma));
            w[static_cast<std::size_t>(i) * k + j] = static_cast<T>(v);
            sum += v;
        }
    for (auto& v : w) v = static_cast<T>(v / sum);
    return TensorT<T>::from_vector({1, 1, k, k}, std::move(w));
}

}  // namespace detail

// Mean SSIM over the valid window positions, differentiable in both inputs.
// The window shrinks to the largest odd size fitting the image, capped at 11.
template <typename T>
TensorT<T> ssim_mean(const TensorT<T>& yh, const TensorT<T>& y) {
    if (yh.ndim() != 4 || yh.dim(1) != 1)
        throw std::invalid_argument("ssim_mean: expected single-channel (N,1,H,W) tensors, got " +
                                    shape_str(yh.shape()));
    if (yh.shape() != y.shape())
        throw std::invalid_argument("ssim_mean: shape mismatch " + shape_str(yh.shape()) + " vs " +
                                    shape_str(y.shape()));
    const int m = std::min(yh.dim(2), yh.dim(3));
    if (m < 3) throw std::invalid_argument("ssim_mean: image smaller than the minimum 3x3 window");
    int k = std::min(11, m);
    if (k % 2 == 0) --k;
    const T C1 = static_cast<T>(0.01 * 0.01), C2 = static_cast<T>(0.03 * 0.03);
    TensorT<T> win = detail::ssim_window<T>(k, 1.5);
    TensorT<T> mu1 = conv2d(yh, win, 1, 0);
    TensorT<T> mu2 = conv2d(y, win, 1, 0);
    TensorT<T> s11 = sub(conv2d(mul(yh, yh), win, 1, 0), mul(mu1, mu1));
    TensorT<T> s22 = sub(conv2d(mul(y, y), win, 1, 0), mul(mu2, mu2));
    TensorT<T> s12 = sub(conv2d(mul(yh, y), win, 1, 0), mul(mu1, mu2));
    TensorT<T> num = mul(add_scalar(scale(mul(mu1, mu2), T(2)), C1), add_scalar(scale(s12, T(2)), C2));
    TensorT<T> den = mul(add_scalar(add(mul(mu1, mu1), mul(mu2, mu2)), C1), add_scalar(add(s11, s22), C2));
    return reduce_mean(div(num, den));
}

template <typename T>
TensorT<T> mae(const TensorT<T>& yh, const TensorT<T>& y) {
    return reduce_mean(abs_val(sub(yh, y)));
}

// alpha * mean |yh - y| + beta * (1 - SSIM(yh, y))
template <typename T>
TensorT<T> loss_total(const TensorT<T>& yh, const TensorT<T>& y, const LossWeights& w = {}) {
    if (w.alpha < 0.0 || w.beta < 0.0) throw std::invalid_argument("loss_total: negative loss weight");
    TensorT<T> pixel = scale(mae(yh, y), static_cast<T>(w.alpha));
    TensorT<T> structural = scale(add_scalar(scale(ssim_mean(yh, y), T(-1)), T(1)), static_cast<T>(w.beta));
    return add(pixel, structural);
}

// Ascent objective for the degradation side: -L(yh, y) plus a proximity term
// keeping the degraded image xh near its source x.
template <typename T>
TensorT<T> loss_generator(const TensorT<T>& yh, const TensorT<T>& y, const TensorT<T>& xh, const TensorT<T>& x,
                          const LossWeights& w = {}, double lambda_reg = 0.1) {
    if (lambda_reg < 0.0) throw std::invalid_argument("loss_generator: negative lambda_reg");
    TensorT<T> neg = scale(loss_total(yh, y, w), T(-1));
    if (lambda_reg == 0.0) return neg;
    return add(neg, scale(loss_total(xh, x, w), static_cast<T>(lambda_reg)));
}

}  // namespace irestore
