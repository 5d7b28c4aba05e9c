#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "minidl/errors.hpp"
#include "minidl/tensor.hpp"

namespace minidl {

template <class S>
class Graph;

// Handle to a node on a Graph tape. Cheap to copy; valid as long as the
// graph it points into is alive and not reset.
template <class S>
struct Var {
    Graph<S>* graph = nullptr;
    int id = -1;

    bool valid() const { return graph != nullptr && id >= 0; }
    const Tensor<S>& value() const { return graph->value(id); }
    const Shape& shape() const { return value().shape(); }
    std::int64_t size() const { return value().size(); }
};

// Reverse-mode autodiff tape. Nodes are appended in creation order, which
// is by construction a topological order of the DAG; backward() visits them
// in exact reverse order. One Graph serves one forward/backward pass and is
// single-threaded.
template <class S>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&)>;

    struct Node {
        Tensor<S> value;
        std::shared_ptr<std::vector<S>> grad;  // allocated on first gradient touch
        bool needs_grad = false;
        BackwardFn backward;  // empty for leaves
    };

    // Leaf that never receives a gradient (data, labels, detached values).
    Var<S> input(Tensor<S> t) {
        nodes_.push_back(Node{std::move(t), nullptr, false, nullptr});
        return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
    }

    // Leaf whose gradient accumulates into the tensor's own grad buffer, so
    // it survives the graph (optimizers read it from the parameter tensor).
    Var<S> param(Tensor<S>& t) {
        if (!t.requires_grad())
            throw GraphError("param() requires a tensor with requires_grad set");
        Node node{t, t.grad_buffer(), true, nullptr};
        nodes_.push_back(std::move(node));
        return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
    }

    // Interior op node. `fn` reads this node's gradient and accumulates into
    // its inputs' gradients; pass nullptr when no input needs a gradient.
    Var<S> make(Tensor<S> value, bool needs_grad, BackwardFn fn) {
        nodes_.push_back(Node{std::move(value), nullptr, needs_grad && grad_enabled_,
                              grad_enabled_ ? std::move(fn) : nullptr});
        return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor<S>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    // Gradient buffer of a node, zero-allocated on first access.
    S* grad(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.grad) n.grad = std::make_shared<std::vector<S>>(n.value.size(), S(0));
        return n.grad->data();
    }

    bool has_grad(int id) const { return static_cast<bool>(nodes_[static_cast<std::size_t>(id)].grad); }

    // Accumulates exact reverse-mode gradients of a scalar loss into every
    // reachable node; d(loss)/d(loss) = 1.
    void backward(Var<S> loss) {
        if (backward_done_) throw GraphError("backward called twice without reset");
        if (!loss.valid() || loss.graph != this) throw GraphError("loss is not a node of this graph");
        if (loss.value().size() != 1) throw GraphError("backward requires a scalar loss");
        backward_done_ = true;
        grad(loss.id)[0] += S(1);
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.backward && n.grad) n.backward(*this);
        }
    }

    // Drops all nodes; the tape can then record a fresh forward pass.
    void reset() {
        nodes_.clear();
        backward_done_ = false;
    }

    int size() const { return static_cast<int>(nodes_.size()); }

    bool grad_enabled() const { return grad_enabled_; }
    void set_grad_enabled(bool v) { grad_enabled_ = v; }

private:
    std::vector<Node> nodes_;
    bool backward_done_ = false;
    bool grad_enabled_ = true;
};

// Scoped inference mode: ops recorded while alive carry no backward state.
template <class S>
class NoGradGuard {
public:
    explicit NoGradGuard(Graph<S>& g) : graph_(g), prev_(g.grad_enabled()) {
        graph_.set_grad_enabled(false);
    }
    ~NoGradGuard() { graph_.set_grad_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Graph<S>& graph_;
    bool prev_;
};

}  // namespace minidl
