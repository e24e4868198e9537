#include <cmath>
#include <vector>

#include "doctest.h"
#include "irestore/nn_ops.hpp"
#include "irestore/rng.hpp"
#include "irestore/tensor.hpp"

using namespace irestore;
using D = TensorT<double>;

namespace {

D randu(std::vector<int> shape, Rng& rng, double lo, double hi, bool grad = false) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return D::from_vector(std::move(shape), std::move(v), grad);
}

}  // namespace

TEST_CASE("elementwise forward values") {
    D a = D::from_vector({2}, {1.0, 2.0});
    D b = D::from_vector({2}, {3.0, 4.0});
    D s = add(a, b);
    CHECK(s.data()[0] == 4.0);
    CHECK(s.data()[1] == 6.0);
    CHECK(sigmoid(D::scalar(0.0)).item() == doctest::Approx(0.5));
    CHECK(reduce_mean(D::from_vector({2}, {2.0, 4.0})).item() == doctest::Approx(3.0));
}

TEST_CASE("shape mismatch names both shapes") {
    D a = D::zeros({2});
    D b = D::zeros({3});
    CHECK_THROWS_WITH_AS(add(a, b), "add: shape mismatch (2) vs (3)", std::invalid_argument);
}

TEST_CASE("mul gradient equals the other factor") {
    D a = D::from_vector({1}, {2.0}, true);
    D b = D::from_vector({1}, {3.0}, true);
    Graph<double> g;
    {
        GraphScope<double> scope(g);
        D loss = reduce_sum(mul(a, b));
        g.backward(loss);
    }
    CHECK(a.grad()[0] == doctest::Approx(3.0));
    CHECK(b.grad()[0] == doctest::Approx(2.0));

    // cross-check against a central difference on the product
    const double h = 1e-4;
    const double fd = ((2.0 + h) * 3.0 - (2.0 - h) * 3.0) / (2.0 * h);
    CHECK(a.grad()[0] == doctest::Approx(fd).epsilon(1e-9));
}

TEST_CASE("backward of sum is all ones") {
    D x = D::from_vector({4}, {0.5, -1.0, 2.0, 0.0}, true);
    Graph<double> g;
    {
        GraphScope<double> scope(g);
        D loss = reduce_sum(x);
        g.backward(loss);
    }
    for (double v : x.grad()) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("squared error gradient vanishes at the minimum") {
    D x = D::from_vector({3}, {0.3, 0.5, 0.7}, true);
    D y = D::from_vector({3}, {0.3, 0.5, 0.7});
    Graph<double> g;
    {
        GraphScope<double> scope(g);
        D d = sub(x, y);
        D loss = reduce_mean(mul(d, d));
        g.backward(loss);
    }
    for (double v : x.grad()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("backward guards") {
    D x = D::from_vector({2}, {1.0, 2.0}, true);
    Graph<double> g;
    GraphScope<double> scope(g);
    D y = scale(x, 2.0);
    CHECK_THROWS_AS(g.backward(y), std::invalid_argument);  // non-scalar
    D loss = reduce_sum(y);
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), std::logic_error);  // tape already consumed

    Graph<double> g2;
    GraphScope<double> scope2(g2);
    D untracked = reduce_sum(D::from_vector({2}, {1.0, 1.0}));
    CHECK_THROWS_AS(g2.backward(untracked), std::logic_error);  // never attached
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(7);
    D x = randu({6}, rng, -1.0, 1.0, true);
    auto grad_of = [&x](double a, double b) {
        x.zero_grad();
        Graph<double> g;
        GraphScope<double> scope(g);
        D l1 = reduce_mean(mul(x, x));
        D l2 = reduce_sum(sigmoid(x));
        D loss = add(scale(l1, a), scale(l2, b));
        g.backward(loss);
        return x.grad();
    };
    auto g1 = grad_of(1.0, 0.0);
    auto g2 = grad_of(0.0, 1.0);
    auto gc = grad_of(2.5, -1.25);
    for (std::size_t i = 0; i < g1.size(); ++i)
        CHECK(gc[i] == doctest::Approx(2.5 * g1[i] - 1.25 * g2[i]).epsilon(1e-10));
}

TEST_CASE("detach blocks gradient flow") {
    D x = D::from_vector({2}, {1.0, 2.0}, true);
    Graph<double> g;
    {
        GraphScope<double> scope(g);
        D y = mul(x.detach(), x);
        D loss = reduce_sum(y);
        g.backward(loss);
    }
    // only the tracked factor contributes, so grad is x itself, not 2x
    CHECK(x.grad()[0] == doctest::Approx(1.0));
    CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("recorded nodes keep inputs before outputs") {
    D x = D::from_vector({2}, {1.0, 2.0}, true);
    Graph<double> warm;
    {
        GraphScope<double> scope(warm);
        D l = reduce_sum(scale(x, 2.0));
        warm.backward(l);
    }
    // x now carries an id from the earlier graph; ordering must still hold
    Graph<double> g;
    {
        GraphScope<double> scope(g);
        D l = reduce_mean(relu(mul(x, x)));
        g.backward(l);
    }
    for (const auto& node : g.nodes())
        for (auto in : node.inputs) CHECK(in < node.output);
}

TEST_CASE("conv2d pinned values") {
    D ones_in = D::full({1, 1, 3, 3}, 1.0);
    D ones_k = D::full({1, 1, 3, 3}, 1.0);
    CHECK(conv2d(ones_in, ones_k, 1, 0).item() == doctest::Approx(9.0));

    Rng rng(11);
    D x = randu({1, 1, 4, 4}, rng, 0.0, 1.0);
    D ident = D::zeros({1, 1, 3, 3});
    ident.data()[4] = 1.0;
    D y = conv2d(x, ident, 1, 1);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < y.data().size(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d shape errors") {
    D x = D::zeros({1, 2, 4, 4});
    D k3 = D::zeros({1, 3, 3, 3});
    CHECK_THROWS_AS(conv2d(x, k3, 1, 1), std::invalid_argument);  // channel mismatch
    D k5 = D::zeros({1, 2, 5, 5});
    CHECK_THROWS_AS(conv2d(x, k5, 1, 0), std::invalid_argument);  // kernel larger than padded input
}

TEST_CASE("resample2 pinned values") {
    D flat = D::full({1, 1, 2, 2}, 1.0);
    D down = resample2(flat, ResampleDirection::down);
    REQUIRE(down.shape() == std::vector<int>{1, 1, 1, 1});
    CHECK(down.item() == doctest::Approx(1.0));

    D constant = D::full({1, 1, 4, 4}, 0.37);
    D round = resample2(resample2(constant, ResampleDirection::down), ResampleDirection::up);
    REQUIRE(round.shape() == constant.shape());
    for (double v : round.data()) CHECK(v == doctest::Approx(0.37));

    CHECK_THROWS_AS(resample2(D::zeros({1, 1, 3, 4}), ResampleDirection::down), std::invalid_argument);
}

TEST_CASE("softmax pinned values and row normalization") {
    D z = softmax_lastdim(D::from_vector({3}, {0.0, 0.0, 0.0}));
    for (double v : z.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

    Rng rng(5);
    D x = randu({4, 7}, rng, -3.0, 3.0);
    D y = softmax_lastdim(x);
    for (int r = 0; r < 4; ++r) {
        double s = 0.0;
        for (int i = 0; i < 7; ++i) {
            const double v = y.data()[static_cast<std::size_t>(r * 7 + i)];
            CHECK(v >= 0.0);
            s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("batch_norm training statistics") {
    Rng rng(3);
    D x = randu({2, 3, 5, 5}, rng, -2.0, 2.0);
    D gamma = D::full({3}, 1.0);
    D beta = D::zeros({3});
    auto stats = std::make_shared<BnStats<double>>(3);
    D y = batch_norm(x, gamma, beta, stats, /*training=*/true);
    const std::size_t plane = 25;
    for (int c = 0; c < 3; ++c) {
        double m = 0.0, v = 0.0;
        for (int n = 0; n < 2; ++n)
            for (std::size_t i = 0; i < plane; ++i) m += y.data()[(static_cast<std::size_t>(n) * 3 + c) * plane + i];
        m /= 50.0;
        for (int n = 0; n < 2; ++n)
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = y.data()[(static_cast<std::size_t>(n) * 3 + c) * plane + i] - m;
                v += d * d;
            }
        v /= 50.0;
        CHECK(std::abs(m) < 1e-4);
        CHECK(std::abs(v - 1.0) < 1e-4);
    }
}

TEST_CASE("clamp straight-through gradient") {
    D x = D::from_vector({4}, {-0.5, 0.25, 0.75, 1.5}, true);
    Graph<double> g;
    {
        GraphScope<double> scope(g);
        D y = clamp01_st(x);
        CHECK(y.data()[0] == 0.0);
        CHECK(y.data()[3] == 1.0);
        g.backward(reduce_sum(y));
    }
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 1.0);
    CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("spike threshold forward and surrogate band") {
    D u = D::from_vector({5}, {0.2, 0.6, 1.0, 1.4, 1.8}, true);
    Graph<double> g;
    D s;
    {
        GraphScope<double> scope(g);
        s = spike_ge(u, 1.0, 0.5);
        g.backward(reduce_sum(s));
    }
    CHECK(s.data()[0] == 0.0);
    CHECK(s.data()[1] == 0.0);
    CHECK(s.data()[2] == 1.0);
    CHECK(s.data()[4] == 1.0);
    // surrogate 1/(2w) inside |u - v_th| <= w, zero outside
    CHECK(u.grad()[0] == 0.0);
    CHECK(u.grad()[1] == doctest::Approx(1.0));
    CHECK(u.grad()[2] == doctest::Approx(1.0));
    CHECK(u.grad()[3] == doctest::Approx(1.0));
    CHECK(u.grad()[4] == 0.0);

    CHECK_THROWS_AS(spike_ge(u, -1.0, 0.5), std::invalid_argument);
}

TEST_CASE("finite inputs give finite outputs") {
    Rng rng(13);
    D x = randu({1, 2, 6, 6}, rng, -5.0, 5.0);
    D k = randu({3, 2, 3, 3}, rng, -2.0, 2.0);
    CHECK(all_finite(conv2d(x, k, 1, 1).data()));
    CHECK(all_finite(sigmoid(x).data()));
    CHECK(all_finite(softmax_lastdim(reshape(x, {12, 6})).data()));
    CHECK(all_finite(bicubic_resize(x, 9, 15).data()));
}
