#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace moe {

// Dense row-major float32 array. Carrier for images, activations and
// gradients throughout the library.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<int> shape_, std::vector<float> data_);

  static Tensor zeros(std::vector<int> shape);

  int64_t numel() const;
  int dim(size_t i) const { return shape.at(i); }
  size_t rank() const { return shape.size(); }

  float* row(int r, int width) { return data.data() + static_cast<size_t>(r) * width; }
  const float* row(int r, int width) const {
    return data.data() + static_cast<size_t>(r) * width;
  }

  bool all_finite() const;
  std::string shape_str() const;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

}  // namespace moe
