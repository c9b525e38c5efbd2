#pragma once

#include <vector>

#include "core/tensor.hpp"

namespace moe {

struct LossResult {
  double loss = 0.0;
  Tensor dlogits;
};

// Mean negative log softmax over the batch; gradient w.r.t. the logits is
// (softmax - onehot)/batch (weighted variant normalizes by the weight sum).
LossResult cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels,
                              const std::vector<float>* sample_weights = nullptr);

// Softmax probabilities per row, with row-max subtraction.
Tensor softmax_rows(const Tensor& logits);

}  // namespace moe
