#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mrg/error.hpp"

namespace mrg {

// Dense row-major f32 tensor. All binary ops require exact shape equality;
// there is no broadcasting, so merging can never silently mix mismatched
// tensors.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> shape_, std::vector<float> data_);

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, float value);

    size_t numel() const { return data.size(); }

    // 2-D accessors; caller guarantees the tensor is a matrix.
    int64_t rows() const { return shape[0]; }
    int64_t cols() const { return shape[1]; }
    float& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
    float at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;

    bool operator==(const Tensor& other) const = default;
};

size_t checked_numel(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

// Elementwise / linear-algebra primitives. All pure: inputs never mutated.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);

} // namespace mrg
