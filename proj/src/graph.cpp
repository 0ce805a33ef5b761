#include "vmus/graph.hpp"

#include "vmus/error.hpp"

namespace vmus {

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Graph::param(Param& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
    Node n;
    n.external = &p.value;
    if (record_grad_ && p.trainable) {
        n.requires_grad = true;
        n.external_grad = &p.grad;
    }
    nodes_.push_back(std::move(n));
    param_nodes_.emplace(&p, nodes_.size() - 1);
    return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    if (record_grad_) {
        for (const Var& v : inputs) needs = needs || nodes_[v.id].requires_grad;
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
    bool needs = false;
    if (record_grad_) {
        for (const Var& v : inputs) needs = needs || nodes_[v.id].requires_grad;
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

const Tensor& Graph::value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
}

const Tensor& Graph::grad(std::size_t id) const { return nodes_[id].grad; }

Tensor* Graph::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.external_grad) return n.external_grad;
    if (!n.has_grad) {
        n.grad = Tensor(value(id).shape());
        n.has_grad = true;
    }
    return &n.grad;
}

void Graph::backward(Var loss, double seed) {
    if (loss.graph != this) throw InvalidArgument("backward: variable from another graph");
    if (!record_grad_) throw InvalidArgument("backward on a graph recorded without gradients");
    if (value(loss.id).size() != 1) throw InvalidArgument("backward: loss must be a scalar");
    Tensor* g = grad_buffer(loss.id);
    if (!g) return;  // nothing trainable contributed
    (*g)[0] += seed;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.has_grad || !n.backward) continue;
        n.backward(*this, i);
        // Intermediate gradients are no longer needed once propagated.
        n.grad = Tensor();
        n.has_grad = false;
    }
}

}  // namespace vmus
