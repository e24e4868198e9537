#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "irestore/nn_ops.hpp"
#include "irestore/rng.hpp"
#include "irestore/tensor.hpp"

namespace irestore {

// Named, gradient-tracked parameters of one network. Handles are shallow, so
// the optimizer and checkpoint code mutate the same buffers the forward pass
// reads.
template <typename T>
struct ParamSet {
    std::vector<std::pair<std::string, TensorT<T>>> items;

    TensorT<T> track(const std::string& name, TensorT<T> t) {
        t.set_requires_grad(true);
        items.emplace_back(name, t);
        return t;
    }

    std::int64_t census() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : items) n += t.numel();
        return n;
    }

    TensorT<T>* find(const std::string& name) {
        for (auto& [n, t] : items)
            if (n == name) return &t;
        return nullptr;
    }
};

namespace detail {

template <typename T>
TensorT<T> fan_in_uniform(std::vector<int> shape, Rng& rng) {
    std::int64_t fan = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan *= shape[static_cast<std::size_t>(i)];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan));
    std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-limit, limit));
    return TensorT<T>::from_vector(std::move(shape), std::move(v));
}

}  // namespace detail

// --- leaky integrate-and-fire ---

// membrane holds the post-reset potential; the recurrence re-applies the
// reset gate, which is a no-op on already-zeroed locations.
template <typename T>
struct LifState {
    TensorT<T> membrane;
    TensorT<T> prev_spikes;
    double tau = 0.5;
    double v_th = 1.0;
    int t = 0;
    int steps = 4;
};

template <typename T>
LifState<T> lif_init(const std::vector<int>& shape, double tau = 0.5, double v_th = 1.0, int steps = 4) {
    if (v_th <= 0.0) throw std::invalid_argument("lif: threshold must be positive");
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("lif: leak factor outside (0,1)");
    if (steps < 1) throw std::invalid_argument("lif: need at least one time step");
    LifState<T> st;
    st.membrane = TensorT<T>::zeros(shape);
    st.prev_spikes = TensorT<T>::zeros(shape);
    st.tau = tau;
    st.v_th = v_th;
    st.steps = steps;
    return st;
}

// u' = tau * u * (1 - s_prev) + input; fire where u' >= v_th; hard reset.
// Backward crosses the spike through the rectangular surrogate window.
template <typename T>
TensorT<T> lif_step(const TensorT<T>& input, LifState<T>& st) {
    if (st.t >= st.steps) throw std::logic_error("lif_step: all " + std::to_string(st.steps) + " time steps consumed");
    if (input.shape() != st.membrane.shape())
        throw std::invalid_argument("lif_step: input " + shape_str(input.shape()) + " does not match state " +
                                    shape_str(st.membrane.shape()));
    TensorT<T> keep = add_scalar(scale(st.prev_spikes, T(-1)), T(1));
    TensorT<T> u = add(scale(mul(st.membrane, keep), static_cast<T>(st.tau)), input);
    TensorT<T> s = spike_ge(u, static_cast<T>(st.v_th), T(0.5));
    st.membrane = mul(u, add_scalar(scale(s, T(-1)), T(1)));
    st.prev_spikes = s;
    st.t += 1;
    return s;
}

// --- scale transform block ---

template <typename T>
struct StmBlock {
    TensorT<T> down_w, down_b;
    TensorT<T> full_w, full_b;
    TensorT<T> fuse_w, fuse_b;
};

template <typename T>
StmBlock<T> make_stm(ParamSet<T>& params, const std::string& prefix, int in_ch, int mid_ch, Rng& rng) {
    StmBlock<T> m;
    m.down_w = params.track(prefix + ".down.w", detail::fan_in_uniform<T>({mid_ch, in_ch, 3, 3}, rng));
    m.down_b = params.track(prefix + ".down.b", TensorT<T>::zeros({mid_ch}));
    m.full_w = params.track(prefix + ".full.w", detail::fan_in_uniform<T>({mid_ch, in_ch, 3, 3}, rng));
    m.full_b = params.track(prefix + ".full.b", TensorT<T>::zeros({mid_ch}));
    m.fuse_w = params.track(prefix + ".fuse.w", detail::fan_in_uniform<T>({in_ch, in_ch + 2 * mid_ch, 1, 1}, rng));
    m.fuse_b = params.track(prefix + ".fuse.b", TensorT<T>::zeros({in_ch}));
    return m;
}

// Half-scale conv branch plus full-scale conv branch, concatenated with the
// input and fused back to the input width by a 1x1 conv.
template <typename T>
TensorT<T> stm_forward(const TensorT<T>& f, const StmBlock<T>& m) {
    if (f.dim(2) % 2 != 0 || f.dim(3) % 2 != 0)
        throw std::invalid_argument("stm_forward: extents " + shape_str(f.shape()) + " must be even");
    TensorT<T> down = resample2(f, ResampleDirection::down);
    TensorT<T> dc = leaky_relu(bias_add(conv2d(down, m.down_w, 1, 1), m.down_b));
    TensorT<T> up = resample2(dc, ResampleDirection::up);
    TensorT<T> fc = leaky_relu(bias_add(conv2d(f, m.full_w, 1, 1), m.full_b));
    TensorT<T> cat = concat_channels<T>({f, up, fc});
    return bias_add(conv2d(cat, m.fuse_w, 1, 0), m.fuse_b);
}

// --- spiking-guided separation block ---

template <typename T>
struct SsmBlock {
    TensorT<T> conv_w;  // bias-free, the threshold-scaled batch norm follows
    TensorT<T> gamma, beta;
    std::shared_ptr<BnStats<T>> stats;
    double tau = 0.5;
    double v_th = 1.0;
    int steps = 4;
};

template <typename T>
SsmBlock<T> make_ssm(ParamSet<T>& params, const std::string& prefix, int ch, Rng& rng, double tau = 0.5,
                     double v_th = 1.0, int steps = 4) {
    SsmBlock<T> m;
    m.conv_w = params.track(prefix + ".conv.w", detail::fan_in_uniform<T>({ch, ch, 3, 3}, rng));
    m.gamma = params.track(prefix + ".bn.gamma", TensorT<T>::full({ch}, T(1)));
    m.beta = params.track(prefix + ".bn.beta", TensorT<T>::zeros({ch}));
    m.stats = std::make_shared<BnStats<T>>(ch);
    m.tau = tau;
    m.v_th = v_th;
    m.steps = steps;
    return m;
}

// Rate-coded spike path: the same features drive the LIF neurons at every
// step; spikes are convolved, normalized with the threshold-scaled batch
// norm, averaged over time, and added back onto the untouched features.
template <typename T>
TensorT<T> ssm_forward(const TensorT<T>& f, const SsmBlock<T>& m, bool training) {
    if (m.steps < 1) throw std::invalid_argument("ssm_forward: need at least one time step");
    LifState<T> st = lif_init<T>(f.shape(), m.tau, m.v_th, m.steps);
    TensorT<T> acc;
    for (int t = 0; t < m.steps; ++t) {
        TensorT<T> s = lif_step(f, st);
        TensorT<T> z = batch_norm(conv2d(s, m.conv_w, 1, 1), m.gamma, m.beta, m.stats, training, T(0.1), T(1e-5),
                                  static_cast<T>(m.v_th));
        acc = t == 0 ? z : add(acc, z);
    }
    return add(f, scale(acc, T(1) / static_cast<T>(m.steps)));
}

// Spike-rate diagnostic: mean spike map over the time steps, no gradients.
template <typename T>
TensorT<T> ssm_spike_rate(const TensorT<T>& f, const SsmBlock<T>& m) {
    TensorT<T> in = f.detach();
    LifState<T> st = lif_init<T>(in.shape(), m.tau, m.v_th, m.steps);
    TensorT<T> acc;
    for (int t = 0; t < m.steps; ++t) {
        TensorT<T> s = lif_step(in, st);
        acc = t == 0 ? s : add(acc, s);
    }
    return scale(acc, T(1) / static_cast<T>(m.steps));
}

// --- degradation classifier ---

template <typename T>
struct Classifier {
    ParamSet<T> params;
    TensorT<T> c1w, c1b, c2w, c2b, c3w, c3b;
    TensorT<T> head_w, head_b;
    int n_steps = 2;
    int n_ops = 9;
};

// Three stride-2 convs, a global average pool, and a linear head. The head
// starts at zero so the initial weight matrix is uniform over the operators.
template <typename T>
Classifier<T> make_classifier(int n_steps, int n_ops, std::uint64_t seed, bool random_head = false) {
    if (n_steps < 1 || n_ops < 1) throw std::invalid_argument("make_classifier: empty weight matrix requested");
    Classifier<T> c;
    c.n_steps = n_steps;
    c.n_ops = n_ops;
    Rng rng(mix_seed(seed, 0x636c7366u));
    c.c1w = c.params.track("cls.c1.w", detail::fan_in_uniform<T>({8, 1, 3, 3}, rng));
    c.c1b = c.params.track("cls.c1.b", TensorT<T>::zeros({8}));
    c.c2w = c.params.track("cls.c2.w", detail::fan_in_uniform<T>({16, 8, 3, 3}, rng));
    c.c2b = c.params.track("cls.c2.b", TensorT<T>::zeros({16}));
    c.c3w = c.params.track("cls.c3.w", detail::fan_in_uniform<T>({32, 16, 3, 3}, rng));
    c.c3b = c.params.track("cls.c3.b", TensorT<T>::zeros({32}));
    const int out = n_steps * n_ops;
    c.head_w = c.params.track("cls.head.w", random_head ? detail::fan_in_uniform<T>({32, out}, rng)
                                                        : TensorT<T>::zeros({32, out}));
    c.head_b = c.params.track("cls.head.b", TensorT<T>::zeros({out}));
    return c;
}

template <typename T>
TensorT<T> classifier_forward(const TensorT<T>& x, const Classifier<T>& th) {
    if (x.ndim() != 4 || x.dim(1) != 1)
        throw std::invalid_argument("classifier_forward: expected (N,1,H,W), got " + shape_str(x.shape()));
    TensorT<T> h = leaky_relu(bias_add(conv2d(x, th.c1w, 2, 1), th.c1b));
    h = leaky_relu(bias_add(conv2d(h, th.c2w, 2, 1), th.c2b));
    h = leaky_relu(bias_add(conv2d(h, th.c3w, 2, 1), th.c3b));
    TensorT<T> logits = bias_add(matmul(global_avg_pool(h), th.head_w), th.head_b);
    for (T v : logits.data())
        if (!std::isfinite(static_cast<double>(v)))
            throw std::runtime_error("classifier_forward: non-finite activations");
    return softmax_lastdim(reshape(logits, {x.dim(0), th.n_steps, th.n_ops}));
}

// --- enhancement network ---

template <typename T>
struct Enhancer {
    ParamSet<T> params;
    TensorT<T> stem_w, stem_b;
    StmBlock<T> stm1, stm2;
    SsmBlock<T> ssm1, ssm2;
    TensorT<T> out_w, out_b;
};

// Stem into two scale-transform/spiking-separation pairs, then a
// zero-initialized reconstruction conv: the network starts as the identity
// and learns a residual.
template <typename T>
Enhancer<T> make_enhancer(std::uint64_t seed, int ch = 16, int mid_ch = 32) {
    Enhancer<T> e;
    Rng rng(mix_seed(seed, 0x656e68u));
    e.stem_w = e.params.track("enh.stem.w", detail::fan_in_uniform<T>({ch, 1, 3, 3}, rng));
    e.stem_b = e.params.track("enh.stem.b", TensorT<T>::zeros({ch}));
    e.stm1 = make_stm(e.params, "enh.pair1.stm", ch, mid_ch, rng);
    e.ssm1 = make_ssm(e.params, "enh.pair1.ssm", ch, rng);
    e.stm2 = make_stm(e.params, "enh.pair2.stm", ch, mid_ch, rng);
    e.ssm2 = make_ssm(e.params, "enh.pair2.ssm", ch, rng);
    e.out_w = e.params.track("enh.out.w", TensorT<T>::zeros({1, ch, 3, 3}));
    e.out_b = e.params.track("enh.out.b", TensorT<T>::zeros({1}));
    return e;
}

template <typename T>
TensorT<T> enhancer_forward(const TensorT<T>& xh, const Enhancer<T>& e, bool training) {
    if (xh.ndim() != 4 || xh.dim(1) != 1)
        throw std::invalid_argument("enhancer_forward: expected (N,1,H,W), got " + shape_str(xh.shape()));
    if (xh.dim(2) % 4 != 0 || xh.dim(3) % 4 != 0)
        throw std::invalid_argument("enhancer_forward: extents " + shape_str(xh.shape()) + " must be divisible by 4");
    TensorT<T> h = leaky_relu(bias_add(conv2d(xh, e.stem_w, 1, 1), e.stem_b));
    h = ssm_forward(stm_forward(h, e.stm1), e.ssm1, training);
    h = ssm_forward(stm_forward(h, e.stm2), e.ssm2, training);
    TensorT<T> r = bias_add(conv2d(h, e.out_w, 1, 1), e.out_b);
    return clamp01_st(add(xh, r));
}

}  // namespace irestore
