// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "matforge/nn/tensor.hpp"

namespace matforge::nn {

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in a define-by-run graph. Nodes that do not require gradients
/// keep no parents or closures, so inference graphs are just values.
struct Node {
    Tensor value;
    Tensor grad; // allocated on first accumulation
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    /// Zero-initialized gradient buffer with the value's shape.
    Tensor& grad_buffer();
};

Var constant(Tensor value);
Var parameter(Tensor value); // leaf with requires_grad = true

/// Builds an op node. `backward` is stored only if some parent requires grad.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

bool any_requires_grad(const std::vector<Var>& parents);

/// Reverse-mode sweep from a scalar root (seeded with d root = 1).
void backward(const Var& root);

} // namespace matforge::nn
