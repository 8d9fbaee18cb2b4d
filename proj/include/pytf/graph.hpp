#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pytf/tensor.hpp"

namespace pytf {

template <typename T>
class GraphT;

// Lightweight handle to a node owned by a GraphT.
template <typename T>
struct VarT {
    GraphT<T>* graph = nullptr;
    int32_t id = -1;

    bool valid() const { return graph != nullptr && id >= 0; }
    const TensorT<T>& value() const { return graph->val(id); }
    const Shape& shape() const { return graph->val(id).shape; }
    const TensorT<T>& grad() const { return graph->grad_of(id); }
    bool requires_grad() const { return graph->requires_grad(id); }
    bool grad_ready() const { return graph->grad_ready(id); }
};

// Eager tape. Nodes are appended in execution order, which is by construction
// a topological order; backward walks the tape once in reverse.
template <typename T>
class GraphT {
public:
    using Tns = TensorT<T>;
    using BackFn = std::function<void(GraphT&)>;

    VarT<T> leaf(Tns value, bool requires_grad = false) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return {this, static_cast<int32_t>(nodes_.size() - 1)};
    }

    // Non-leaf node; requires_grad is inherited from the inputs, and the
    // backward closure is dropped when no input needs gradients.
    VarT<T> make(Tns value, std::vector<int32_t> inputs, BackFn back) {
        Node n;
        n.value = std::move(value);
        n.inputs = std::move(inputs);
        for (int32_t in : n.inputs)
            if (nodes_[static_cast<size_t>(in)].requires_grad) n.requires_grad = true;
        if (n.requires_grad) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return {this, static_cast<int32_t>(nodes_.size() - 1)};
    }

    Tns& val(int32_t id) { return nodes_[static_cast<size_t>(id)].value; }
    const Tns& val(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }

    bool requires_grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    bool grad_ready(int32_t id) const { return nodes_[static_cast<size_t>(id)].grad_ready; }

    const Tns& grad_of(int32_t id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.grad_ready)
            throw std::logic_error("graph: gradient not computed for this node (run backward first)");
        return n.grad;
    }

    // Gradient buffer for accumulation inside backward closures. Returns
    // nullptr when the node does not take part in differentiation.
    Tns* grad_buf(int32_t id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        return n.grad_ready ? &n.grad : nullptr;
    }

    size_t num_nodes() const { return nodes_.size(); }

    // Reverse-mode sweep from `out` seeded with `seed`. Gradients accumulate
    // into every grad-requiring node reachable from `out`.
    void backward(VarT<T> out, const Tns& seed) {
        if (out.graph != this) throw std::invalid_argument("backward: output belongs to another graph");
        Node& on = nodes_[static_cast<size_t>(out.id)];
        if (seed.shape != on.value.shape)
            throw std::invalid_argument("backward: seed shape " + shape_str(seed.shape) +
                                        " does not match output shape " + shape_str(on.value.shape));
        if (!on.requires_grad) return;  // nothing reachable requires gradients

        // Mark the active subgraph (grad-requiring ancestors of `out`).
        std::vector<char> active(nodes_.size(), 0);
        std::vector<int32_t> stack{out.id};
        while (!stack.empty()) {
            int32_t id = stack.back();
            stack.pop_back();
            if (active[static_cast<size_t>(id)]) continue;
            active[static_cast<size_t>(id)] = 1;
            for (int32_t in : nodes_[static_cast<size_t>(id)].inputs)
                if (nodes_[static_cast<size_t>(in)].requires_grad) stack.push_back(in);
        }

        for (size_t i = 0; i < nodes_.size(); ++i) {
            if (!active[i]) continue;
            Node& n = nodes_[i];
            n.grad = Tns::zeros(n.value.shape);
            n.grad_ready = true;
        }

        Node& seeded = nodes_[static_cast<size_t>(out.id)];
        for (int64_t i = 0; i < seed.numel(); ++i) seeded.grad[i] += seed[i];

        for (int32_t id = out.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (active[static_cast<size_t>(id)] && n.back) n.back(*this);
        }
    }

private:
    struct Node {
        Tns value;
        Tns grad;
        std::vector<int32_t> inputs;
        BackFn back;
        bool requires_grad = false;
        bool grad_ready = false;
    };

    std::vector<Node> nodes_;
};

using Graph = GraphT<float>;
using GraphD = GraphT<double>;
using Var = VarT<float>;
using VarD = VarT<double>;

// Central-difference gradient verification. `f` maps (graph, leaf var) to a
// scalar var and must be re-evaluable (pure up to running-statistic updates
// that do not affect its value). Returns the max over coordinates of
// |analytic - numeric| / max(1, |analytic|, |numeric|).
template <typename F>
double grad_check(F&& f, const TensorD& x, double h = 1e-4) {
    if (!(h >= 1e-5 && h <= 1e-2))
        throw std::invalid_argument("grad_check: step h must lie in [1e-5, 1e-2]");

    GraphD g;
    VarD leaf = g.leaf(x, true);
    VarD out = f(g, leaf);
    if (out.value().numel() != 1)
        throw std::invalid_argument("grad_check: f must produce a scalar, got shape " +
                                    shape_str(out.value().shape));
    g.backward(out, TensorD::scalar(1.0));
    TensorD analytic = leaf.grad();

    auto eval = [&](const TensorD& probe) {
        GraphD gg;
        VarD v = gg.leaf(probe, false);
        VarD o = f(gg, v);
        return o.value()[0];
    };

    double worst = 0.0;
    TensorD probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        double orig = probe[i];
        probe[i] = orig + h;
        double fp = eval(probe);
        probe[i] = orig - h;
        double fm = eval(probe);
        probe[i] = orig;
        double numeric = (fp - fm) / (2.0 * h);
        double a = analytic[i];
        double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace pytf
