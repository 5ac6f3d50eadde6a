#include "mrg/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace mrg {

size_t checked_numel(const std::vector<int64_t>& shape) {
    size_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) fail(ErrorCode::bad_value, "tensor dimension must be positive, got " + std::to_string(d));
        if (n > std::numeric_limits<size_t>::max() / static_cast<size_t>(d))
            fail(ErrorCode::bad_value, "tensor element count overflows");
        n *= static_cast<size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<int64_t> shape_, std::vector<float> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    if (checked_numel(shape) != data.size())
        fail(ErrorCode::shape_mismatch,
             "shape " + shape_str(shape) + " does not match buffer of " + std::to_string(data.size()) + " elements");
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    size_t n = checked_numel(shape);
    return Tensor(std::move(shape), std::vector<float>(n, 0.0f));
}

Tensor Tensor::full(std::vector<int64_t> shape, float value) {
    size_t n = checked_numel(shape);
    return Tensor(std::move(shape), std::vector<float>(n, value));
}

bool Tensor::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        fail(ErrorCode::shape_mismatch,
             std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite())
        fail(ErrorCode::non_finite, std::string(op) + ": result contains non-finite values");
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    require_finite(out, "add");
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    require_finite(out, "sub");
    return out;
}

Tensor scale(const Tensor& a, float c) {
    if (!std::isfinite(c)) fail(ErrorCode::bad_value, "scale: factor must be finite");
    Tensor out = a;
    for (float& v : out.data) v *= c;
    require_finite(out, "scale");
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
    require_finite(out, "hadamard");
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2)
        fail(ErrorCode::shape_mismatch, "matmul: operands must be 2-D");
    if (a.cols() != b.rows())
        fail(ErrorCode::shape_mismatch,
             "matmul: inner dimensions disagree, " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    // 64-bit accumulation keeps results deterministic and accurate.
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p)
                acc += static_cast<double>(a.at(i, p)) * static_cast<double>(b.at(p, j));
            out.at(i, j) = static_cast<float>(acc);
        }
    }
    require_finite(out, "matmul");
    return out;
}

} // namespace mrg
