#include "irestore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "irestore/degrade.hpp"
#include "irestore/loss.hpp"
#include "irestore/nn_ops.hpp"
#include "irestore/rng.hpp"

namespace irestore {

namespace {

DTensor randu(std::vector<int> shape, Rng& rng, double lo, double hi) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return DTensor::from_vector(std::move(shape), std::move(v), true);
}

// Magnitudes in [margin, hi] with random sign, so finite-difference probes
// never straddle the kink at zero.
DTensor randu_signed(std::vector<int> shape, Rng& rng, double margin, double hi) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) {
        const double m = rng.uniform(margin, hi);
        x = rng.uniform() < 0.5 ? -m : m;
    }
    return DTensor::from_vector(std::move(shape), std::move(v), true);
}

DTensor fixed_weights(const std::vector<int>& shape, Rng& rng) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return DTensor::from_vector(shape, std::move(v));
}

DTensor weighted_mean(const DTensor& y, const DTensor& w) { return reduce_mean(mul(y, w)); }

}  // namespace

GradReport run_gradcheck(const GradCase& c, double tol) {
    GradReport rep;
    rep.name = c.name;

    auto inputs = c.inputs;
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }

    std::vector<std::vector<double>> analytic;
    {
        Graph<double> g;
        GraphScope<double> scope(g);
        DTensor loss = c.loss(inputs);
        g.backward(loss);
    }
    for (const auto& in : inputs) analytic.push_back(in.grad());

    // Coordinates whose analytic and numeric values differ by less than this
    // are finite-difference noise: central differences at h=1e-3 carry
    // truncation error far above machine precision, which would otherwise
    // dominate the relative error wherever the true gradient is near zero.
    double gmax = 0.0;
    for (const auto& g : analytic)
        for (double v : g) gmax = std::max(gmax, std::abs(v));
    const double atol = std::max(1e-9, 1e-6 * gmax);

    auto eval = [&]() { return c.loss(inputs).item(); };

    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto& x = inputs[t].data();
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double x0 = x[j];
            const double h = 1e-3 * std::max(1.0, std::abs(x0));
            x[j] = x0 + h;
            const double lp = eval();
            x[j] = x0 - h;
            const double lm = eval();
            x[j] = x0;
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic[t][j];
            const double diff = std::abs(a - numeric);
            double rel = diff / std::max({std::abs(a), std::abs(numeric), 1e-6});
            if (diff <= atol) rel = 0.0;
            rep.max_rel = std::max(rep.max_rel, rel);
            ++rep.coords;
        }
    }
    rep.pass = rep.max_rel < tol;
    return rep;
}

namespace {

GradCase case_elementwise_arith(Rng& rng) {
    GradCase c;
    c.name = "elementwise_arith";
    c.inputs = {randu({2, 3}, rng, 0.2, 0.9), randu({2, 3}, rng, 0.2, 0.9)};
    DTensor w = fixed_weights({2, 3}, rng);
    c.loss = [w](const std::vector<DTensor>& in) {
        DTensor num = mul(add(in[0], in[1]), sub(in[0], in[1]));
        DTensor den = add_scalar(in[1], 1.5);
        return weighted_mean(sigmoid(div(num, den)), w);
    };
    return c;
}

GradCase case_elementwise_unary(Rng& rng) {
    GradCase c;
    c.name = "elementwise_unary";
    c.inputs = {randu_signed({3, 4}, rng, 0.05, 1.0)};
    DTensor w1 = fixed_weights({3, 4}, rng);
    DTensor w2 = fixed_weights({3, 4}, rng);
    DTensor w3 = fixed_weights({3, 4}, rng);
    c.loss = [w1, w2, w3](const std::vector<DTensor>& in) {
        DTensor a = weighted_mean(relu(in[0]), w1);
        DTensor b = weighted_mean(leaky_relu(in[0]), w2);
        DTensor d = weighted_mean(abs_val(in[0]), w3);
        return add(add(a, b), d);
    };
    return c;
}

GradCase case_clamp_interior(Rng& rng) {
    GradCase c;
    c.name = "clamp_interior";
    c.inputs = {randu({4, 4}, rng, 0.05, 0.95)};
    DTensor w = fixed_weights({4, 4}, rng);
    c.loss = [w](const std::vector<DTensor>& in) { return weighted_mean(clamp01_st(in[0]), w); };
    return c;
}

GradCase case_spike_surrogate(Rng& rng) {
    GradCase c;
    c.name = "spike_surrogate";
    // In-band values keep clear of the ramp corners at v_th - w and v_th + w;
    // the tail coordinates sit far outside where both gradients vanish.
    std::vector<double> u(12);
    for (std::size_t i = 0; i < 8; ++i) u[i] = rng.uniform(0.55, 1.45);
    for (std::size_t i = 8; i < 10; ++i) u[i] = rng.uniform(1.6, 2.0);
    for (std::size_t i = 10; i < 12; ++i) u[i] = rng.uniform(0.0, 0.4);
    c.inputs = {DTensor::from_vector({12}, std::move(u), true)};
    DTensor w = fixed_weights({12}, rng);
    c.loss = [w](const std::vector<DTensor>& in) {
        return weighted_mean(spike_ge(in[0], 1.0, 0.5, /*relaxed=*/true), w);
    };
    return c;
}

GradCase case_lif_path(Rng& rng) {
    GradCase c;
    c.name = "lif_path";
    const int steps = 4, n = 6;
    const double tau = 0.5, v_th = 1.0, width = 0.5;
    // Redraw any neuron whose relaxed membrane trajectory passes close to a
    // ramp corner, so the probes stay in a linear region.
    std::vector<std::vector<double>> drive(static_cast<std::size_t>(steps), std::vector<double>(static_cast<std::size_t>(n)));
    for (int j = 0; j < n; ++j) {
        for (int attempt = 0; attempt < 200; ++attempt) {
            std::vector<double> d(static_cast<std::size_t>(steps));
            for (auto& v : d) v = rng.uniform(0.2, 0.7);
            double u = 0.0, s = 0.0;
            bool ok = true;
            for (int t = 0; t < steps; ++t) {
                const double up = tau * u * (1.0 - s) + d[static_cast<std::size_t>(t)];
                if (std::abs(up - (v_th - width)) < 0.05 || std::abs(up - (v_th + width)) < 0.05) {
                    ok = false;
                    break;
                }
                const double dd = up - v_th;
                s = dd < -width ? 0.0 : (dd > width ? 1.0 : (dd + width) / (2.0 * width));
                u = up * (1.0 - s);
            }
            if (ok) {
                for (int t = 0; t < steps; ++t) drive[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] = d[static_cast<std::size_t>(t)];
                break;
            }
        }
    }
    for (int t = 0; t < steps; ++t)
        c.inputs.push_back(DTensor::from_vector({n}, drive[static_cast<std::size_t>(t)], true));
    DTensor w = fixed_weights({n}, rng);
    c.loss = [w, steps, tau, v_th, width](const std::vector<DTensor>& in) {
        DTensor u = DTensor::zeros({in[0].dim(0)});
        DTensor s = DTensor::zeros({in[0].dim(0)});
        DTensor acc = DTensor::zeros({in[0].dim(0)});
        for (int t = 0; t < steps; ++t) {
            DTensor up = add(mul(scale(u, tau), affine(s, -1.0, 1.0)), in[static_cast<std::size_t>(t)]);
            s = spike_ge(up, v_th, width, /*relaxed=*/true);
            u = mul(up, affine(s, -1.0, 1.0));
            acc = add(acc, s);
        }
        return weighted_mean(acc, w);
    };
    return c;
}

GradCase case_conv_s1(Rng& rng) {
    GradCase c;
    c.name = "conv2d_s1p1";
    c.inputs = {randu({1, 2, 5, 5}, rng, 0.0, 1.0), randu({3, 2, 3, 3}, rng, -0.5, 0.5)};
    DTensor w = fixed_weights({1, 3, 5, 5}, rng);
    c.loss = [w](const std::vector<DTensor>& in) { return weighted_mean(conv2d(in[0], in[1], 1, 1), w); };
    return c;
}

GradCase case_conv_s2(Rng& rng) {
    GradCase c;
    c.name = "conv2d_s2p1";
    c.inputs = {randu({1, 3, 6, 6}, rng, 0.0, 1.0), randu({4, 3, 3, 3}, rng, -0.5, 0.5)};
    DTensor w = fixed_weights({1, 4, 3, 3}, rng);
    c.loss = [w](const std::vector<DTensor>& in) { return weighted_mean(conv2d(in[0], in[1], 2, 1), w); };
    return c;
}

GradCase case_conv_1x1(Rng& rng) {
    GradCase c;
    c.name = "conv2d_1x1";
    c.inputs = {randu({2, 3, 4, 4}, rng, 0.0, 1.0), randu({5, 3, 1, 1}, rng, -0.5, 0.5)};
    DTensor w = fixed_weights({2, 5, 4, 4}, rng);
    c.loss = [w](const std::vector<DTensor>& in) { return weighted_mean(conv2d(in[0], in[1], 1, 0), w); };
    return c;
}

GradCase case_pool_down(Rng& rng) {
    GradCase c;
    c.name = "resample2_down";
    c.inputs = {randu({1, 2, 6, 6}, rng, 0.0, 1.0)};
    DTensor w = fixed_weights({1, 2, 3, 3}, rng);
    c.loss = [w](const std::vector<DTensor>& in) {
        return weighted_mean(resample2(in[0], ResampleDirection::down), w);
    };
    return c;
}

GradCase case_bilinear_up(Rng& rng) {
    GradCase c;
    c.name = "resample2_up";
    c.inputs = {randu({1, 1, 3, 3}, rng, 0.0, 1.0)};
    DTensor w = fixed_weights({1, 1, 6, 6}, rng);
    c.loss = [w](const std::vector<DTensor>& in) {
        return weighted_mean(resample2(in[0], ResampleDirection::up), w);
    };
    return c;
}

GradCase case_bicubic(Rng& rng) {
    GradCase c;
    c.name = "bicubic_roundtrip";
    c.inputs = {randu({1, 1, 8, 8}, rng, 0.0, 1.0)};
    DTensor w = fixed_weights({1, 1, 8, 8}, rng);
    c.loss = [w](const std::vector<DTensor>& in) {
        return weighted_mean(bicubic_resize(bicubic_resize(in[0], 4, 4), 8, 8), w);
    };
    return c;
}

GradCase case_matmul_bias(Rng& rng) {
    GradCase c;
    c.name = "matmul_bias";
    c.inputs = {randu({2, 3}, rng, -1.0, 1.0), randu({3, 4}, rng, -1.0, 1.0), randu({4}, rng, -0.5, 0.5)};
    DTensor w = fixed_weights({2, 4}, rng);
    c.loss = [w](const std::vector<DTensor>& in) {
        return weighted_mean(bias_add(matmul(in[0], in[1]), in[2]), w);
    };
    return c;
}

GradCase case_bias_channels(Rng& rng) {
    GradCase c;
    c.name = "bias_channels";
    c.inputs = {randu({2, 3, 4, 4}, rng, 0.0, 1.0), randu({3}, rng, -0.5, 0.5)};
    DTensor w = fixed_weights({2, 3, 4, 4}, rng);
    c.loss = [w](const std::vector<DTensor>& in) { return weighted_mean(bias_add(in[0], in[1]), w); };
    return c;
}

GradCase case_softmax(Rng& rng) {
    GradCase c;
    c.name = "softmax_rows";
    c.inputs = {randu({2, 5}, rng, -2.0, 2.0)};
    DTensor w = fixed_weights({2, 5}, rng);
    c.loss = [w](const std::vector<DTensor>& in) { return weighted_mean(softmax_lastdim(in[0]), w); };
    return c;
}

GradCase case_concat_gap(Rng& rng) {
    GradCase c;
    c.name = "concat_gap_reshape";
    c.inputs = {randu({1, 2, 4, 4}, rng, 0.0, 1.0), randu({1, 3, 4, 4}, rng, 0.0, 1.0)};
    DTensor w = fixed_weights({5}, rng);
    c.loss = [w](const std::vector<DTensor>& in) {
        DTensor cat = concat_channels<double>({in[0], in[1]});
        return weighted_mean(reshape(global_avg_pool(cat), {5}), w);
    };
    return c;
}

GradCase case_bn_train(Rng& rng) {
    GradCase c;
    c.name = "batch_norm_train";
    c.inputs = {randu({2, 3, 4, 4}, rng, 0.0, 1.0), randu({3}, rng, 0.5, 1.5), randu({3}, rng, -0.5, 0.5)};
    DTensor w = fixed_weights({2, 3, 4, 4}, rng);
    auto stats = std::make_shared<BnStats<double>>(3);
    c.loss = [w, stats](const std::vector<DTensor>& in) {
        return weighted_mean(batch_norm(in[0], in[1], in[2], stats, /*training=*/true, 0.1, 1e-5, 0.7), w);
    };
    return c;
}

GradCase case_bn_eval(Rng& rng) {
    GradCase c;
    c.name = "batch_norm_eval";
    c.inputs = {randu({2, 3, 4, 4}, rng, 0.0, 1.0), randu({3}, rng, 0.5, 1.5), randu({3}, rng, -0.5, 0.5)};
    DTensor w = fixed_weights({2, 3, 4, 4}, rng);
    auto stats = std::make_shared<BnStats<double>>(3);
    for (auto& m : stats->mean) m = rng.uniform(0.3, 0.7);
    for (auto& v : stats->var) v = rng.uniform(0.5, 1.5);
    c.loss = [w, stats](const std::vector<DTensor>& in) {
        return weighted_mean(batch_norm(in[0], in[1], in[2], stats, /*training=*/false, 0.1, 1e-5, 0.7), w);
    };
    return c;
}

GradCase case_stripe_grad(Rng& rng) {
    GradCase c;
    c.name = "stripe_image_grad";
    // interior values keep the post-bias range clear of the clamp kinks
    c.inputs = {randu({2, 1, 4, 5}, rng, 0.15, 0.85)};
    DTensor w = fixed_weights({2, 1, 4, 5}, rng);
    const std::vector<std::uint64_t> seeds = {rng.next_u64(), rng.next_u64()};
    c.loss = [w, seeds](const std::vector<DTensor>& in) {
        return weighted_mean(degrade_stripe(in[0], 0.1, seeds), w);
    };
    return c;
}

GradCase case_contrast_grad(Rng& rng) {
    GradCase c;
    c.name = "contrast_image_grad";
    c.inputs = {randu({2, 1, 4, 4}, rng, 0.1, 0.9)};
    DTensor w = fixed_weights({2, 1, 4, 4}, rng);
    c.loss = [w](const std::vector<DTensor>& in) {
        return weighted_mean(degrade_contrast(in[0], 0.5, 1.2), w);
    };
    return c;
}

GradCase case_mix_softmax(Rng& rng) {
    GradCase c;
    c.name = "weighted_mix_softmax";
    // raw logits go through softmax so every probe still satisfies the
    // row-sum contract of the mixer
    c.inputs = {randu({2, 1, 3}, rng, -1.0, 1.0), randu({2, 1, 3, 3}, rng, 0.1, 0.9),
                randu({2, 1, 3, 3}, rng, 0.1, 0.9), randu({2, 1, 3, 3}, rng, 0.1, 0.9)};
    DTensor w = fixed_weights({2, 1, 3, 3}, rng);
    c.loss = [w](const std::vector<DTensor>& in) {
        DTensor a = softmax_lastdim(in[0]);
        return weighted_mean(weighted_mix(a, 0, {in[1], in[2], in[3]}), w);
    };
    return c;
}

GradCase case_compose_chain(Rng& rng) {
    GradCase c;
    c.name = "compose_chain";
    SeverityBank bank;
    bank.ops = {{DegradeFamily::identity, 0.0, 0.0},
                {DegradeFamily::stripe, 0.05, 0.0},
                {DegradeFamily::lowres, 2.0, 0.0},
                {DegradeFamily::contrast, 0.5, 1.2}};
    c.inputs = {randu({1, 1, 8, 8}, rng, 0.2, 0.8), randu({1, 2, 4}, rng, -1.0, 1.0)};
    DTensor w = fixed_weights({1, 1, 8, 8}, rng);
    const std::uint64_t seed_base = rng.next_u64();
    c.loss = [w, bank, seed_base](const std::vector<DTensor>& in) {
        DTensor a = softmax_lastdim(in[1]);
        return weighted_mean(compose(in[0], a, bank, seed_base), w);
    };
    return c;
}

GradCase case_reductions(Rng& rng) {
    GradCase c;
    c.name = "reductions";
    c.inputs = {randu({3, 3}, rng, -1.0, 1.0)};
    c.loss = [](const std::vector<DTensor>& in) {
        return add(scale(reduce_sum(in[0]), 0.25), reduce_mean(in[0]));
    };
    return c;
}

// Prediction in (0.25, 0.75), target split off by at least 0.05 in a random
// direction: both the absolute-error kink and the [0,1] range stay clear.
GradCase case_loss_total(Rng& rng) {
    GradCase c;
    c.name = "loss_total";
    DTensor yh = randu({1, 1, 8, 8}, rng, 0.25, 0.75);
    std::vector<double> tv(64);
    for (std::size_t i = 0; i < tv.size(); ++i) {
        const double off = rng.uniform(0.05, 0.2);
        tv[i] = yh.data()[i] + (rng.uniform() < 0.5 ? -off : off);
    }
    c.inputs = {yh, DTensor::from_vector({1, 1, 8, 8}, std::move(tv))};
    c.loss = [](const std::vector<DTensor>& in) { return loss_total(in[0], in[1]); };
    return c;
}

using CaseFn = GradCase (*)(Rng&);

constexpr CaseFn kCaseFns[] = {
    case_elementwise_arith, case_elementwise_unary, case_clamp_interior, case_spike_surrogate,
    case_lif_path,          case_conv_s1,           case_conv_s2,        case_conv_1x1,
    case_pool_down,         case_bilinear_up,       case_bicubic,        case_matmul_bias,
    case_bias_channels,     case_softmax,           case_concat_gap,     case_bn_train,
    case_bn_eval,           case_reductions,        case_stripe_grad,    case_contrast_grad,
    case_mix_softmax,       case_compose_chain,     case_loss_total,
};

}  // namespace

std::vector<GradCase> gradcheck_cases(std::uint64_t seed) {
    std::vector<GradCase> cases;
    int idx = 0;
    for (CaseFn fn : kCaseFns) {
        for (int inst = 0; inst < 3; ++inst) {
            Rng rng(mix_seed(seed, 0x67726164u, static_cast<std::uint64_t>(idx), static_cast<std::uint64_t>(inst)));
            GradCase c = fn(rng);
            c.name += "#" + std::to_string(inst);
            cases.push_back(std::move(c));
        }
        ++idx;
    }
    return cases;
}

std::vector<GradReport> run_gradcheck_suite(std::uint64_t seed, double tol) {
    std::vector<GradReport> out;
    for (const GradCase& c : gradcheck_cases(seed)) out.push_back(run_gradcheck(c, tol));
    return out;
}

}  // namespace irestore
