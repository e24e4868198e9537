#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "irestore/nn_ops.hpp"
#include "irestore/rng.hpp"
#include "irestore/tensor.hpp"

namespace irestore {

enum class DegradeFamily { identity, stripe, lowres, contrast };

// One operator of the mixture: a family plus its severity parameters.
// stripe uses p0 = amplitude; lowres uses p0 = scale; contrast uses
// p0 = factor, p1 = gamma.
struct DegradeLevel {
    DegradeFamily family = DegradeFamily::identity;
    double p0 = 0.0;
    double p1 = 0.0;

    std::string name() const;
};

// The operator set the mixture ranges over. Slot 0 is always identity.
struct SeverityBank {
    std::vector<DegradeLevel> ops;

    static SeverityBank standard();
    int n_ops() const { return static_cast<int>(ops.size()); }
    void validate() const;
};

inline std::string DegradeLevel::name() const {
    char buf[64];
    switch (family) {
        case DegradeFamily::identity:
            return "identity";
        case DegradeFamily::stripe:
            std::snprintf(buf, sizeof buf, "stripe %g", p0);
            return buf;
        case DegradeFamily::lowres:
            std::snprintf(buf, sizeof buf, "lowres %d", static_cast<int>(p0));
            return buf;
        case DegradeFamily::contrast:
            std::snprintf(buf, sizeof buf, "contrast %g %g", p0, p1);
            return buf;
    }
    return "unknown";
}

inline SeverityBank SeverityBank::standard() {
    SeverityBank b;
    b.ops = {
        {DegradeFamily::identity, 0.0, 0.0},
        {DegradeFamily::stripe, 0.05, 0.0},
        {DegradeFamily::stripe, 0.15, 0.0},
        {DegradeFamily::stripe, 0.30, 0.0},
        {DegradeFamily::lowres, 2.0, 0.0},
        {DegradeFamily::lowres, 4.0, 0.0},
        {DegradeFamily::contrast, 0.7, 1.0},
        {DegradeFamily::contrast, 0.5, 1.2},
        {DegradeFamily::contrast, 0.3, 1.5},
    };
    return b;
}

inline void SeverityBank::validate() const {
    if (ops.empty() || ops[0].family != DegradeFamily::identity)
        throw std::invalid_argument("severity bank: slot 0 must be the identity operator");
    double last_stripe = -1.0, last_lowres = -1.0, last_contrast = -1.0;
    for (std::size_t i = 1; i < ops.size(); ++i) {
        const DegradeLevel& l = ops[i];
        switch (l.family) {
            case DegradeFamily::identity:
                throw std::invalid_argument("severity bank: identity may appear only in slot 0");
            case DegradeFamily::stripe:
                if (l.p0 < 0.0 || l.p0 > 0.5)
                    throw std::invalid_argument("severity bank: stripe amplitude " + std::to_string(l.p0) +
                                                " outside [0, 0.5]");
                if (l.p0 <= last_stripe)
                    throw std::invalid_argument("severity bank: stripe levels must increase");
                last_stripe = l.p0;
                break;
            case DegradeFamily::lowres:
                if (l.p0 != 2.0 && l.p0 != 4.0)
                    throw std::invalid_argument("severity bank: lowres scale must be 2 or 4");
                if (l.p0 <= last_lowres) throw std::invalid_argument("severity bank: lowres levels must increase");
                last_lowres = l.p0;
                break;
            case DegradeFamily::contrast:
                if (l.p0 <= 0.0 || l.p0 > 1.0)
                    throw std::invalid_argument("severity bank: contrast factor " + std::to_string(l.p0) +
                                                " outside (0, 1]");
                if (l.p1 < 1.0 || l.p1 > 3.0)
                    throw std::invalid_argument("severity bank: contrast gamma " + std::to_string(l.p1) +
                                                " outside [1, 3]");
                // severity grows as factor shrinks
                if (last_contrast >= 0.0 && l.p0 >= last_contrast)
                    throw std::invalid_argument("severity bank: contrast levels must increase");
                last_contrast = l.p0;
                break;
        }
    }
}

// Per-column offsets in [-1, 1), one stream per seed.
inline std::vector<double> stripe_pattern(int width, std::uint64_t column_seed) {
    Rng rng(column_seed);
    std::vector<double> b(static_cast<std::size_t>(width));
    for (auto& v : b) v = rng.uniform(-1.0, 1.0);
    return b;
}

// Adds a per-column constant bias, then clamps. The pattern is additive, so
// the image Jacobian is identity inside the clamp region.
template <typename T>
TensorT<T> degrade_stripe(const TensorT<T>& x, double amplitude, const std::vector<std::uint64_t>& seeds) {
    detail::check_nchw(x.shape(), "degrade_stripe");
    if (amplitude < 0.0 || amplitude > 0.5)
        throw std::invalid_argument("degrade_stripe: amplitude " + std::to_string(amplitude) + " outside [0, 0.5]");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (static_cast<int>(seeds.size()) != N)
        throw std::invalid_argument("degrade_stripe: need one seed per batch item");
    NodeBuilder<T> nb;
    nb.consume(x);
    TensorT<T> out = nb.out_like(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    auto pass = std::make_shared<std::vector<std::uint8_t>>(xv.size());
    for (int n = 0; n < N; ++n) {
        const auto b = stripe_pattern(W, seeds[static_cast<std::size_t>(n)]);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y) {
                const std::size_t row = ((static_cast<std::size_t>(n) * C + c) * H + y) * W;
                for (int col = 0; col < W; ++col) {
                    const T pre = xv[row + col] + static_cast<T>(amplitude * b[static_cast<std::size_t>(col)]);
                    const bool inside = pre >= T(0) && pre <= T(1);
                    (*pass)[row + col] = inside ? 1 : 0;
                    ov[row + col] = pre < T(0) ? T(0) : (pre > T(1) ? T(1) : pre);
                }
            }
    }
    nb.finish(out, "stripe", [gx = x.grad_ptr(), go = out.grad_ptr(), pass]() {
        if (!gx) return;
        const auto& g = *go;
        for (std::size_t i = 0; i < g.size(); ++i)
            if ((*pass)[i]) (*gx)[i] += g[i];
    });
    return out;
}

// Bicubic down then up at the same scale; content above the reduced Nyquist
// band is lost, which is the point.
template <typename T>
TensorT<T> degrade_lowres(const TensorT<T>& x, int scale) {
    detail::check_nchw(x.shape(), "degrade_lowres");
    if (scale != 2 && scale != 4) throw std::invalid_argument("degrade_lowres: scale must be 2 or 4");
    const int H = x.dim(2), W = x.dim(3);
    if (H % scale != 0 || W % scale != 0)
        throw std::invalid_argument("degrade_lowres: extents " + shape_str(x.shape()) + " not divisible by scale " +
                                    std::to_string(scale));
    return clamp01_st(bicubic_resize(bicubic_resize(x, H / scale, W / scale), H, W));
}

// y = m + factor*(x^gamma - m) with m the per-image mean of x^gamma, then
// clamp. Backward distributes the mean term across the image.
template <typename T>
TensorT<T> degrade_contrast(const TensorT<T>& x, double factor, double gamma) {
    detail::check_nchw(x.shape(), "degrade_contrast");
    if (factor <= 0.0 || factor > 1.0)
        throw std::invalid_argument("degrade_contrast: factor " + std::to_string(factor) + " outside (0, 1]");
    if (gamma < 1.0 || gamma > 3.0)
        throw std::invalid_argument("degrade_contrast: gamma " + std::to_string(gamma) + " outside [1, 3]");
    const int N = x.dim(0);
    const std::size_t per = static_cast<std::size_t>(x.numel() / N);
    NodeBuilder<T> nb;
    nb.consume(x);
    TensorT<T> out = nb.out_like(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    auto pass = std::make_shared<std::vector<std::uint8_t>>(xv.size());
    const T f = static_cast<T>(factor);
    for (int n = 0; n < N; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * per;
        T m = T(0);
        for (std::size_t i = 0; i < per; ++i)
            m += static_cast<T>(std::pow(std::max(static_cast<double>(xv[base + i]), 0.0), gamma));
        m /= static_cast<T>(per);
        for (std::size_t i = 0; i < per; ++i) {
            const T t = static_cast<T>(std::pow(std::max(static_cast<double>(xv[base + i]), 0.0), gamma));
            const T pre = f * t + (T(1) - f) * m;
            (*pass)[base + i] = (pre >= T(0) && pre <= T(1)) ? 1 : 0;
            ov[base + i] = pre < T(0) ? T(0) : (pre > T(1) ? T(1) : pre);
        }
    }
    nb.finish(out, "contrast",
              [gx = x.grad_ptr(), xd = x.data_ptr(), go = out.grad_ptr(), pass, N, per, f, gamma]() {
                  if (!gx) return;
                  const auto& g = *go;
                  const auto& xr = *xd;
                  for (int n = 0; n < N; ++n) {
                      const std::size_t base = static_cast<std::size_t>(n) * per;
                      T gsum = T(0);
                      for (std::size_t i = 0; i < per; ++i)
                          if ((*pass)[base + i]) gsum += g[base + i];
                      const T spread = (T(1) - f) * gsum / static_cast<T>(per);
                      for (std::size_t i = 0; i < per; ++i) {
                          const T gt = (((*pass)[base + i]) ? f * g[base + i] : T(0)) + spread;
                          const double xb = std::max(static_cast<double>(xr[base + i]), 0.0);
                          (*gx)[base + i] += gt * static_cast<T>(gamma * std::pow(xb, gamma - 1.0));
                      }
                  }
              });
    return out;
}

template <typename T>
TensorT<T> apply_degrade(const TensorT<T>& x, const DegradeLevel& level, const std::vector<std::uint64_t>& seeds) {
    switch (level.family) {
        case DegradeFamily::identity:
            return x;
        case DegradeFamily::stripe:
            return degrade_stripe(x, level.p0, seeds);
        case DegradeFamily::lowres:
            return degrade_lowres(x, static_cast<int>(level.p0));
        case DegradeFamily::contrast:
            return degrade_contrast(x, level.p0, level.p1);
    }
    throw std::logic_error("apply_degrade: unknown family");
}

// Per-image convex combination of operator outputs at one step. `a` has
// shape (N, steps, n_ops); gradient reaches both the weights and the
// operator outputs.
template <typename T>
TensorT<T> weighted_mix(const TensorT<T>& a, int step, const std::vector<TensorT<T>>& ops) {
    if (a.ndim() != 3) throw std::invalid_argument("weighted_mix: weights must be (N, steps, n_ops)");
    const int N = a.dim(0), NS = a.dim(1), NOPS = a.dim(2);
    if (step < 0 || step >= NS) throw std::invalid_argument("weighted_mix: step index out of range");
    if (static_cast<int>(ops.size()) != NOPS)
        throw std::invalid_argument("weighted_mix: expected " + std::to_string(NOPS) + " operator outputs, got " +
                                    std::to_string(ops.size()));
    for (const auto& op : ops) {
        detail::check_nchw(op.shape(), "weighted_mix");
        if (op.dim(0) != N || op.shape() != ops[0].shape())
            throw std::invalid_argument("weighted_mix: operator output shapes disagree");
    }
    const auto& av = a.data();
    for (int n = 0; n < N; ++n) {
        T sum = T(0);
        for (int j = 0; j < NOPS; ++j) {
            const T w = av[(static_cast<std::size_t>(n) * NS + step) * NOPS + j];
            if (w < T(0) || w > T(1))
                throw std::invalid_argument("weighted_mix: weight outside [0,1] at image " + std::to_string(n));
            sum += w;
        }
        if (std::abs(static_cast<double>(sum) - 1.0) > 1e-6)
            throw std::invalid_argument("weighted_mix: weight row of image " + std::to_string(n) +
                                        " sums to " + std::to_string(static_cast<double>(sum)) + ", expected 1");
    }

    NodeBuilder<T> nb;
    nb.consume(a);
    for (const auto& op : ops) nb.consume(op);
    TensorT<T> out = nb.out_like(ops[0].shape());
    const std::size_t per = static_cast<std::size_t>(out.numel() / N);
    auto& ov = out.data();
    std::vector<std::shared_ptr<std::vector<T>>> op_data, op_grad;
    for (const auto& op : ops) {
        op_data.push_back(op.data_ptr());
        op_grad.push_back(op.grad_ptr());
    }
    for (int n = 0; n < N; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * per;
        for (int j = 0; j < NOPS; ++j) {
            const T w = av[(static_cast<std::size_t>(n) * NS + step) * NOPS + j];
            const T* src = op_data[static_cast<std::size_t>(j)]->data() + base;
            for (std::size_t i = 0; i < per; ++i) ov[base + i] += w * src[i];
        }
    }
    nb.finish(out, "weighted_mix",
              [ga = a.grad_ptr(), ad = a.data_ptr(), op_data, op_grad, go = out.grad_ptr(), N, NS, NOPS, per,
               step]() {
                  const auto& g = *go;
                  for (int n = 0; n < N; ++n) {
                      const std::size_t base = static_cast<std::size_t>(n) * per;
                      for (int j = 0; j < NOPS; ++j) {
                          const std::size_t aidx = (static_cast<std::size_t>(n) * NS + step) * NOPS + j;
                          const T* src = op_data[static_cast<std::size_t>(j)]->data() + base;
                          if (ga) {
                              T acc = T(0);
                              for (std::size_t i = 0; i < per; ++i) acc += g[base + i] * src[i];
                              (*ga)[aidx] += acc;
                          }
                          if (op_grad[static_cast<std::size_t>(j)]) {
                              const T w = (*ad)[aidx];
                              T* dst = op_grad[static_cast<std::size_t>(j)]->data() + base;
                              for (std::size_t i = 0; i < per; ++i) dst[i] += w * g[base + i];
                          }
                      }
                  }
              });
    return out;
}

// Seed for the stripe pattern of image n, operator slot j, at a composition
// step. Derived statelessly so runs are reproducible from the base alone.
inline std::uint64_t stripe_seed(std::uint64_t base, int step, int image, int op_slot) {
    return mix_seed(base, 0x73747270u, (static_cast<std::uint64_t>(step) << 32) | static_cast<std::uint32_t>(op_slot),
                    static_cast<std::uint64_t>(image));
}

template <typename T>
TensorT<T> compose_step(const TensorT<T>& x, const TensorT<T>& a, int step, const SeverityBank& bank,
                        std::uint64_t seed_base) {
    bank.validate();
    if (a.ndim() != 3 || a.dim(2) != bank.n_ops())
        throw std::invalid_argument("compose: weights " + shape_str(a.shape()) + " do not match bank of " +
                                    std::to_string(bank.n_ops()) + " operators");
    const int N = x.dim(0);
    std::vector<TensorT<T>> outs;
    outs.reserve(static_cast<std::size_t>(bank.n_ops()));
    for (int j = 0; j < bank.n_ops(); ++j) {
        std::vector<std::uint64_t> seeds(static_cast<std::size_t>(N));
        for (int n = 0; n < N; ++n) seeds[static_cast<std::size_t>(n)] = stripe_seed(seed_base, step, n, j);
        outs.push_back(apply_degrade(x, bank.ops[static_cast<std::size_t>(j)], seeds));
    }
    return weighted_mix(a, step, outs);
}

// Eq-style iterative mixture: each step replaces the image with the weighted
// convex combination of every bank operator applied to it.
template <typename T>
TensorT<T> compose(const TensorT<T>& x, const TensorT<T>& a, const SeverityBank& bank, std::uint64_t seed_base) {
    detail::check_nchw(x.shape(), "compose");
    if (a.ndim() != 3 || a.dim(0) != x.dim(0))
        throw std::invalid_argument("compose: weights " + shape_str(a.shape()) + " do not cover batch " +
                                    shape_str(x.shape()));
    TensorT<T> cur = x;
    for (int step = 0; step < a.dim(1); ++step) cur = compose_step(cur, a, step, bank, seed_base);
    return cur;
}

}  // namespace irestore
