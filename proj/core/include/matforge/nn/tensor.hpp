// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <string>
#include <vector>

namespace matforge::nn {

/// 64-byte aligned storage keeps vectorized kernels on the same code path
/// for every allocation, so results do not depend on heap addresses.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept
    {
        return true;
    }
};

using TensorStorage = std::vector<double, AlignedAllocator<double>>;

/// Contiguous row-major tensor of doubles. Image activations use NHWC.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::initializer_list<int> shape, double fill = 0.0) : Tensor(std::vector<int>(shape), fill) {}

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    TensorStorage& values() { return data_; }
    const TensorStorage& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    void fill(double v);
    Tensor reshaped(std::vector<int> shape) const;

    std::string shape_string() const;

    bool operator==(const Tensor& o) const = default;

private:
    std::vector<int> shape_;
    TensorStorage data_;
};

std::size_t shape_numel(const std::vector<int>& shape);

} // namespace matforge::nn
