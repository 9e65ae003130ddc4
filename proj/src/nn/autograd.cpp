#include "lapanet/nn/autograd.hpp"

#include "lapanet/types.hpp"

#include <sstream>
#include <unordered_set>

namespace lapanet::nn {

namespace {

thread_local bool recording = true;

} // namespace

std::string Tensor::shape_string() const
{
    std::ostringstream os;
    os << '(' << shape[0] << ", " << shape[1] << ", " << shape[2] << ", " << shape[3] << ')';
    return os.str();
}

void require_shape(const Tensor& t, const std::array<int, 4>& shape, const char* what)
{
    if (t.shape != shape) {
        Tensor expected;
        expected.shape = shape;
        throw ValidationError(std::string(what) + ": shape " + t.shape_string() + ", expected " + expected.shape_string());
    }
}

Tensor& Node::grad_buffer()
{
    if (!has_grad())
        grad = Tensor::zeros_like(value);
    return grad;
}

Var constant(Tensor t)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return n;
}

Var parameter(Tensor t, std::string name)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    n->name = std::move(name);
    return n;
}

bool grad_enabled()
{
    return recording;
}

NoGradGuard::NoGradGuard() : previous_(recording)
{
    recording = false;
}

NoGradGuard::~NoGradGuard()
{
    recording = previous_;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (!recording)
        return n;
    bool needed = false;
    for (const auto& p : parents)
        needed = needed || p->requires_grad;
    if (!needed)
        return n;
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
    return n;
}

namespace {

std::vector<Node*> topological_order(Node* root)
{
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second)
                stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

} // namespace

void backward(const Var& root)
{
    if (root->value.size() != 1)
        throw ValidationError("backward: root must be a scalar");
    if (!root->requires_grad)
        return;
    root->grad_buffer().data(0) += 1.0;
    const auto order = topological_order(root.get());
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->has_grad())
            n->backward_fn(*n);
    }
}

void release_graph(const Var& root)
{
    const auto order = topological_order(root.get());
    for (Node* n : order) {
        n->parents.clear();
        n->backward_fn = nullptr;
    }
}

} // namespace lapanet::nn
