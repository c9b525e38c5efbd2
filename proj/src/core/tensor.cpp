#include "core/tensor.hpp"

#include <cmath>
#include <sstream>

#include "core/error.hpp"

namespace moe {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    require(d > 0, ErrorCode::InvalidArgument, "tensor extents must be positive, got " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int> shape_, std::vector<float> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  require(shape_numel(shape) == static_cast<int64_t>(data.size()), ErrorCode::ShapeMismatch,
          "tensor data length " + std::to_string(data.size()) + " does not match shape " +
              shape_to_string(shape));
}

Tensor Tensor::zeros(std::vector<int> shape) {
  size_t n = static_cast<size_t>(shape_numel(shape));
  return Tensor(std::move(shape), std::vector<float>(n, 0.0f));
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

bool Tensor::all_finite() const {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

}  // namespace moe
