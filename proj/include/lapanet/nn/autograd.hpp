#pragma once

#include "lapanet/nn/tensor.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace lapanet::nn {

/// One value in the recorded computation. Leaves are parameters or inputs;
/// interior nodes carry a closure that pushes their gradient to the parents.
struct Node {
    Tensor value;
    Tensor grad;   ///< allocated lazily, same shape as value
    bool requires_grad = false;
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& grad_buffer();
    bool has_grad() const { return grad.size() == value.size() && grad.size() > 0; }
};

using Var = std::shared_ptr<Node>;

/// Leaf holding a constant (no gradient).
Var constant(Tensor t);
/// Leaf that accumulates gradients.
Var parameter(Tensor t, std::string name = {});

/// Recording switch; while disabled, ops build no graph.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Creates the result node of an op. The closure is attached only when
/// recording is on and some parent needs a gradient.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Reverse-mode sweep from a scalar root; gradients accumulate into every
/// reachable node that requires them.
void backward(const Var& root);

/// Releases recorded edges below `root` so the graph can be freed while the
/// leaves keep their gradients.
void release_graph(const Var& root);

} // namespace lapanet::nn
