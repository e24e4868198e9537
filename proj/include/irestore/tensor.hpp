#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace irestore {

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

inline std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor extent must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

// Dense row-major tensor. Copies are shallow handles: data and grad buffers
// are shared, so forward results can be passed around by value.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        TensorT t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<T>>(static_cast<std::size_t>(shape_numel(t.shape_)), T(0));
        if (requires_grad) t.set_requires_grad(true);
        return t;
    }

    static TensorT full(std::vector<int> shape, T value) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : *t.data_) v = value;
        return t;
    }

    static TensorT from_vector(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
            throw std::invalid_argument("from_vector: shape " + shape_str(shape) + " does not hold " +
                                        std::to_string(values.size()) + " values");
        TensorT t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<T>>(std::move(values));
        if (requires_grad) t.set_requires_grad(true);
        return t;
    }

    static TensorT scalar(T v) { return from_vector({1}, {v}); }

    bool defined() const { return data_ != nullptr; }
    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

    std::vector<T>& data() { return *data_; }
    const std::vector<T>& data() const { return *data_; }
    const std::shared_ptr<std::vector<T>>& data_ptr() const { return data_; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on) {
        requires_grad_ = on;
        if (on) {
            if (!grad_) grad_ = std::make_shared<std::vector<T>>(data_->size(), T(0));
            if (!id_) id_ = std::make_shared<std::int64_t>(-1);
        }
    }

    bool has_grad() const { return grad_ != nullptr; }
    std::vector<T>& grad() {
        if (!grad_) throw std::logic_error("tensor has no grad buffer");
        return *grad_;
    }
    const std::vector<T>& grad() const {
        if (!grad_) throw std::logic_error("tensor has no grad buffer");
        return *grad_;
    }
    const std::shared_ptr<std::vector<T>>& grad_ptr() const { return grad_; }
    void zero_grad() {
        if (grad_)
            for (auto& g : *grad_) g = T(0);
    }

    std::int64_t node_id() const { return id_ ? *id_ : -1; }
    void set_node_id(std::int64_t id) const {
        if (id_) *id_ = id;
    }
    bool has_id_slot() const { return id_ != nullptr; }

    T item() const {
        if (numel() != 1) throw std::invalid_argument("item(): tensor is not scalar, shape " + shape_str(shape_));
        return (*data_)[0];
    }

    // Same storage under a new shape.
    TensorT reshaped_view(std::vector<int> new_shape) const {
        if (shape_numel(new_shape) != numel())
            throw std::invalid_argument("reshape: " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                                        " changes element count");
        TensorT t = *this;
        t.shape_ = std::move(new_shape);
        return t;
    }

    // Shares data, drops grad tracking.
    TensorT detach() const {
        TensorT t;
        t.shape_ = shape_;
        t.data_ = data_;
        return t;
    }

private:
    std::vector<int> shape_;
    std::shared_ptr<std::vector<T>> data_;
    std::shared_ptr<std::vector<T>> grad_;
    bool requires_grad_ = false;
    // Shared so a const handle can be labeled when it first enters a graph.
    std::shared_ptr<std::int64_t> id_;
};

template <typename T>
bool all_finite(const std::vector<T>& v) {
    for (T x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

// Ids are global and monotone so a leaf labeled in an earlier graph still
// precedes every node of a later one.
inline std::atomic<std::int64_t>& global_node_counter() {
    static std::atomic<std::int64_t> c{0};
    return c;
}

// Append-only tape for one forward pass. Nodes are recorded in execution
// order, which is a topological order by construction; backward walks the
// tape once in reverse.
template <typename T>
class Graph {
public:
    struct Node {
        std::function<void()> fn;
        std::vector<std::int64_t> inputs;
        std::int64_t output = -1;
        const char* kind = "";
    };

    std::int64_t fresh_id() { return global_node_counter()++; }

    void record(Node n) { nodes_.push_back(std::move(n)); }

    const std::vector<Node>& nodes() const { return nodes_; }
    bool consumed() const { return consumed_; }

    void backward(TensorT<T> loss) {
        if (consumed_)
            throw std::logic_error("backward called twice on the same graph; run a new forward pass first");
        if (loss.numel() != 1)
            throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
        if (!loss.requires_grad() || !loss.has_grad())
            throw std::logic_error("backward: loss is not attached to this graph");
        loss.grad()[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
        consumed_ = true;
    }

private:
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

template <typename T>
inline Graph<T>*& active_graph() {
    thread_local Graph<T>* g = nullptr;
    return g;
}

// RAII scope making a graph the recording target for ops on this thread.
template <typename T>
class GraphScope {
public:
    explicit GraphScope(Graph<T>& g) : prev_(active_graph<T>()) { active_graph<T>() = &g; }
    ~GraphScope() { active_graph<T>() = prev_; }
    GraphScope(const GraphScope&) = delete;
    GraphScope& operator=(const GraphScope&) = delete;

private:
    Graph<T>* prev_;
};

// Collects op inputs, decides whether the result is tracked, and records the
// node. Leaves entering the graph for the first time get ids here so the
// recorded topology is inspectable.
template <typename T>
class NodeBuilder {
public:
    NodeBuilder() : graph_(active_graph<T>()) {}

    void consume(const TensorT<T>& t) {
        if (!graph_ || !t.requires_grad()) return;
        tracked_ = true;
        if (t.node_id() < 0) t.set_node_id(graph_->fresh_id());
        input_ids_.push_back(t.node_id());
    }

    bool tracked() const { return tracked_; }

    // Output factory. Must run before the backward closure is built so the
    // closure captures a live grad buffer, not a null one.
    TensorT<T> out_like(std::vector<int> shape) {
        TensorT<T> t = TensorT<T>::zeros(std::move(shape));
        if (tracked_) t.set_requires_grad(true);
        return t;
    }

    // Same purpose for outputs built by other means (shared storage).
    void adopt(TensorT<T>& t) {
        if (tracked_) t.set_requires_grad(true);
    }

    void finish(TensorT<T>& out, const char* kind, std::function<void()> fn) {
        if (!tracked_) return;
        out.set_requires_grad(true);
        const std::int64_t id = graph_->fresh_id();
        out.set_node_id(id);
        graph_->record({std::move(fn), std::move(input_ids_), id, kind});
    }

private:
    Graph<T>* graph_;
    std::vector<std::int64_t> input_ids_;
    bool tracked_ = false;
};

namespace detail {

template <typename T>
inline void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

template <typename T>
inline void accumulate(const std::shared_ptr<std::vector<T>>& grad, const std::vector<T>& delta) {
    if (!grad) return;
    auto& g = *grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

// ---- elementwise binary ops ----

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "add");
    NodeBuilder<T> nb;
    nb.consume(a);
    nb.consume(b);
    TensorT<T> out = nb.out_like(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    nb.finish(out, "add", [ga = a.grad_ptr(), gb = b.grad_ptr(), go = out.grad_ptr()]() {
        const auto& g = *go;
        if (ga)
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        if (gb)
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
    });
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "sub");
    NodeBuilder<T> nb;
    nb.consume(a);
    nb.consume(b);
    TensorT<T> out = nb.out_like(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    nb.finish(out, "sub", [ga = a.grad_ptr(), gb = b.grad_ptr(), go = out.grad_ptr()]() {
        const auto& g = *go;
        if (ga)
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        if (gb)
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    });
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mul");
    NodeBuilder<T> nb;
    nb.consume(a);
    nb.consume(b);
    TensorT<T> out = nb.out_like(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    nb.finish(out, "mul",
              [ga = a.grad_ptr(), gb = b.grad_ptr(), ad = a.data_ptr(), bd = b.data_ptr(), go = out.grad_ptr()]() {
                  const auto& g = *go;
                  if (ga)
                      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (*bd)[i];
                  if (gb)
                      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * (*ad)[i];
              });
    return out;
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "div");
    NodeBuilder<T> nb;
    nb.consume(a);
    nb.consume(b);
    TensorT<T> out = nb.out_like(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
    nb.finish(out, "div",
              [ga = a.grad_ptr(), gb = b.grad_ptr(), od = out.data_ptr(), bd = b.data_ptr(), go = out.grad_ptr()]() {
                  const auto& g = *go;
                  if (ga)
                      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / (*bd)[i];
                  if (gb)
                      for (std::size_t i = 0; i < g.size(); ++i)
                          (*gb)[i] -= g[i] * (*od)[i] / (*bd)[i];
              });
    return out;
}

// ---- scalar broadcast ops ----

// m*x + c, elementwise
template <typename T>
TensorT<T> affine(const TensorT<T>& x, T m, T c) {
    NodeBuilder<T> nb;
    nb.consume(x);
    TensorT<T> out = nb.out_like(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = m * xv[i] + c;
    nb.finish(out, "affine", [gx = x.grad_ptr(), go = out.grad_ptr(), m]() {
        if (!gx) return;
        const auto& g = *go;
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += m * g[i];
    });
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T s) {
    return affine(x, s, T(0));
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& x, T c) {
    return affine(x, T(1), c);
}

// ---- elementwise unary ops ----

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    NodeBuilder<T> nb;
    nb.consume(x);
    TensorT<T> out = nb.out_like(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = T(1) / (T(1) + std::exp(-xv[i]));
    nb.finish(out, "sigmoid", [gx = x.grad_ptr(), od = out.data_ptr(), go = out.grad_ptr()]() {
        if (!gx) return;
        const auto& g = *go;
        const auto& y = *od;
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (T(1) - y[i]);
    });
    return out;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    NodeBuilder<T> nb;
    nb.consume(x);
    TensorT<T> out = nb.out_like(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
    nb.finish(out, "relu", [gx = x.grad_ptr(), xd = x.data_ptr(), go = out.grad_ptr()]() {
        if (!gx) return;
        const auto& g = *go;
        const auto& xr = *xd;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xr[i] > T(0)) (*gx)[i] += g[i];
    });
    return out;
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T slope = T(0.1)) {
    NodeBuilder<T> nb;
    nb.consume(x);
    TensorT<T> out = nb.out_like(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : slope * xv[i];
    nb.finish(out, "leaky_relu", [gx = x.grad_ptr(), xd = x.data_ptr(), go = out.grad_ptr(), slope]() {
        if (!gx) return;
        const auto& g = *go;
        const auto& xr = *xd;
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += (xr[i] > T(0) ? g[i] : slope * g[i]);
    });
    return out;
}

template <typename T>
TensorT<T> abs_val(const TensorT<T>& x) {
    NodeBuilder<T> nb;
    nb.consume(x);
    TensorT<T> out = nb.out_like(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::abs(xv[i]);
    nb.finish(out, "abs", [gx = x.grad_ptr(), xd = x.data_ptr(), go = out.grad_ptr()]() {
        if (!gx) return;
        const auto& g = *go;
        const auto& xr = *xd;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (xr[i] > T(0))
                (*gx)[i] += g[i];
            else if (xr[i] < T(0))
                (*gx)[i] -= g[i];
        }
    });
    return out;
}

// Hard clamp to [0,1] with a straight-through backward: gradient passes where
// the pre-clamp value lies in [0,1], is dropped outside.
template <typename T>
TensorT<T> clamp01_st(const TensorT<T>& x) {
    NodeBuilder<T> nb;
    nb.consume(x);
    TensorT<T> out = nb.out_like(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] < T(0) ? T(0) : (xv[i] > T(1) ? T(1) : xv[i]);
    nb.finish(out, "clamp01", [gx = x.grad_ptr(), xd = x.data_ptr(), go = out.grad_ptr()]() {
        if (!gx) return;
        const auto& g = *go;
        const auto& xr = *xd;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xr[i] >= T(0) && xr[i] <= T(1)) (*gx)[i] += g[i];
    });
    return out;
}

// Spike threshold: 1 where u >= v_th, else 0. Backward is the rectangular
// surrogate 1/(2w) on |u - v_th| <= w. With relaxed=true the forward is the
// piecewise-linear ramp whose true derivative equals that surrogate; the
// finite-difference suite checks the backward against this relaxation.
template <typename T>
TensorT<T> spike_ge(const TensorT<T>& u, T v_th, T w, bool relaxed = false) {
    if (v_th <= T(0)) throw std::invalid_argument("spike_ge: firing threshold must be positive");
    NodeBuilder<T> nb;
    nb.consume(u);
    TensorT<T> out = nb.out_like(u.shape());
    const auto& uv = u.data();
    auto& ov = out.data();
    if (relaxed) {
        for (std::size_t i = 0; i < ov.size(); ++i) {
            const T d = uv[i] - v_th;
            ov[i] = d < -w ? T(0) : (d > w ? T(1) : (d + w) / (T(2) * w));
        }
    } else {
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = uv[i] >= v_th ? T(1) : T(0);
    }
    nb.finish(out, "spike", [gu = u.grad_ptr(), ud = u.data_ptr(), go = out.grad_ptr(), v_th, w]() {
        if (!gu) return;
        const auto& g = *go;
        const auto& ur = *ud;
        const T inv = T(1) / (T(2) * w);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (std::abs(ur[i] - v_th) <= w) (*gu)[i] += g[i] * inv;
    });
    return out;
}

// ---- reductions ----

template <typename T>
TensorT<T> reduce_sum(const TensorT<T>& x) {
    NodeBuilder<T> nb;
    nb.consume(x);
    T s = T(0);
    for (T v : x.data()) s += v;
    TensorT<T> out = nb.out_like({1});
    out.data()[0] = s;
    nb.finish(out, "sum", [gx = x.grad_ptr(), go = out.grad_ptr()]() {
        if (!gx) return;
        const T g = (*go)[0];
        for (auto& v : *gx) v += g;
    });
    return out;
}

template <typename T>
TensorT<T> reduce_mean(const TensorT<T>& x) {
    if (x.numel() == 0) throw std::invalid_argument("reduce_mean: empty tensor");
    NodeBuilder<T> nb;
    nb.consume(x);
    T s = T(0);
    for (T v : x.data()) s += v;
    const T n = static_cast<T>(x.numel());
    TensorT<T> out = nb.out_like({1});
    out.data()[0] = s / n;  // true division so mean of n equal values is exact
    nb.finish(out, "mean", [gx = x.grad_ptr(), go = out.grad_ptr(), n]() {
        if (!gx) return;
        const T g = (*go)[0] / n;
        for (auto& v : *gx) v += g;
    });
    return out;
}

using Tensor = TensorT<float>;

}  // namespace irestore
