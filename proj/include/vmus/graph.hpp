#pragma once

#include <cstddef>
#include <functional>
#include <unordered_map>
#include <vector>

#include "vmus/param.hpp"
#include "vmus/tensor.hpp"

namespace vmus {

class Graph;

// Handle to a value recorded on a Graph.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
};

// Reverse-mode tape. Every op appends a node holding its forward value and a
// closure that pushes the output gradient to its inputs. Parameter leaves
// accumulate straight into Param::grad; frozen parameters are recorded as
// constants and never receive gradient.
class Graph {
public:
    using Backward = std::function<void(Graph&, std::size_t self)>;

    explicit Graph(bool record_grad = true) : record_grad_(record_grad) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const noexcept { return record_grad_; }

    Var constant(Tensor value);
    Var param(Param& p);
    Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
    Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

    const Tensor& value(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    bool requires_grad(Var v) const { return requires_grad(v.id); }

    // Gradient of node id; only valid inside a backward closure.
    const Tensor& grad(std::size_t id) const;
    // Gradient buffer of an input, allocated on first use. Returns nullptr
    // when the input does not require gradient.
    Tensor* grad_buffer(std::size_t id);

    // Seeds d(loss)/d(loss) = seed and runs every recorded closure in reverse.
    void backward(Var loss, double seed = 1.0);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;
        Tensor grad;
        Tensor* external_grad = nullptr;
        bool requires_grad = false;
        bool has_grad = false;
        Backward backward;
    };

    bool record_grad_;
    std::vector<Node> nodes_;
    std::unordered_map<const Param*, std::size_t> param_nodes_;
};

}  // namespace vmus
