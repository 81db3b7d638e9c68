// SPDX-License-Identifier: Apache-2.0
#include "matforge/nn/tensor.hpp"

#include <algorithm>

#include "matforge/common.hpp"

namespace matforge::nn {

std::size_t shape_numel(const std::vector<int>& shape)
{
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0)
            throw StructuralError("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<int> shape) const
{
    if (shape_numel(shape) != data_.size())
        throw StructuralError("reshape from " + shape_string() + " changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

std::string Tensor::shape_string() const
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i)
            s += ", ";
        s += std::to_string(shape_[i]);
    }
    return s + "]";
}

} // namespace matforge::nn
