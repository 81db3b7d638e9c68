// SPDX-License-Identifier: Apache-2.0
#include "matforge/nn/autograd.hpp"

#include <unordered_set>

#include "matforge/common.hpp"

namespace matforge::nn {

Tensor& Node::grad_buffer()
{
    if (grad.shape() != value.shape())
        grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var constant(Tensor value)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

Var parameter(Tensor value)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return n;
}

bool any_requires_grad(const std::vector<Var>& parents)
{
    for (const Var& p : parents)
        if (p && p->requires_grad)
            return true;
    return false;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (any_requires_grad(parents)) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward);
    }
    return n;
}

void backward(const Var& root)
{
    if (!root || root->value.numel() != 1)
        throw StructuralError("backward() needs a scalar root");
    if (!root->requires_grad)
        return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p && p->requires_grad && visited.insert(p).second)
                stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.shape() == n->value.shape())
            n->backward_fn(*n);
    }
}

} // namespace matforge::nn
