#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "irestore/net.hpp"
#include "irestore/tensor.hpp"

namespace irestore {

enum class OptDirection { descent, ascent };

// SGD or Adam over one ParamSet. Moment buffers are keyed by parameter
// position, which the checkpoint format relies on. A step with any missing or
// non-finite gradient aborts before touching parameters; a completed step
// zeroes every gradient.
template <typename T>
class Optimizer {
public:
    enum class Kind { sgd, adam };

    static Optimizer sgd(double lr) { return Optimizer(Kind::sgd, lr); }
    static Optimizer adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
        Optimizer o(Kind::adam, lr);
        o.beta1_ = beta1;
        o.beta2_ = beta2;
        o.eps_ = eps;
        return o;
    }

    void step(ParamSet<T>& params, OptDirection dir) {
        for (auto& [name, p] : params.items) {
            if (!p.grad_ptr()) throw std::runtime_error("optimizer_step: parameter " + name + " has no gradient");
            for (T g : p.grad())
                if (!std::isfinite(static_cast<double>(g)))
                    throw std::runtime_error("optimizer_step: non-finite gradient in " + name);
        }
        const T sign = dir == OptDirection::ascent ? T(1) : T(-1);
        if (kind_ == Kind::adam) {
            ++step_count_;
            m_.resize(params.items.size());
            v_.resize(params.items.size());
        }
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
        for (std::size_t i = 0; i < params.items.size(); ++i) {
            auto& p = params.items[i].second;
            auto& pd = p.data();
            const auto& g = p.grad();
            if (kind_ == Kind::sgd) {
                for (std::size_t j = 0; j < pd.size(); ++j) pd[j] += sign * static_cast<T>(lr_) * g[j];
            } else {
                auto& m = m_[i];
                auto& v = v_[i];
                if (m.empty()) m.assign(pd.size(), T(0));
                if (v.empty()) v.assign(pd.size(), T(0));
                if (m.size() != pd.size() || v.size() != pd.size())
                    throw std::logic_error("optimizer_step: moment shape drifted for " + params.items[i].first);
                for (std::size_t j = 0; j < pd.size(); ++j) {
                    m[j] = static_cast<T>(beta1_) * m[j] + static_cast<T>(1.0 - beta1_) * g[j];
                    v[j] = static_cast<T>(beta2_) * v[j] + static_cast<T>(1.0 - beta2_) * g[j] * g[j];
                    const double mh = static_cast<double>(m[j]) / bc1;
                    const double vh = static_cast<double>(v[j]) / bc2;
                    pd[j] += sign * static_cast<T>(lr_ * mh / (std::sqrt(vh) + eps_));
                }
            }
            p.zero_grad();
        }
    }

    Kind kind() const { return kind_; }
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    double beta1() const { return beta1_; }
    double beta2() const { return beta2_; }
    double eps() const { return eps_; }
    std::int64_t step_count() const { return step_count_; }
    void set_step_count(std::int64_t n) { step_count_ = n; }
    std::vector<std::vector<T>>& moments_m() { return m_; }
    std::vector<std::vector<T>>& moments_v() { return v_; }
    const std::vector<std::vector<T>>& moments_m() const { return m_; }
    const std::vector<std::vector<T>>& moments_v() const { return v_; }

private:
    Optimizer(Kind k, double lr) : kind_(k), lr_(lr) {
        if (lr <= 0.0) throw std::invalid_argument("optimizer: learning rate must be positive");
    }

    Kind kind_;
    double lr_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::int64_t step_count_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

}  // namespace irestore
