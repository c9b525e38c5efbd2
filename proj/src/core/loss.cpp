#include "core/loss.hpp"

#include <cmath>

#include "core/error.hpp"
#include "core/network_impl.hpp"

namespace moe {

LossResult cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels,
                              const std::vector<float>* sample_weights) {
  require(logits.rank() == 2, ErrorCode::ShapeMismatch,
          "logits must be [batch, classes], got " + logits.shape_str());
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  require(static_cast<size_t>(n) == labels.size(), ErrorCode::ShapeMismatch,
          "logits rows " + std::to_string(n) + " != labels length " +
              std::to_string(labels.size()));
  if (sample_weights != nullptr) {
    require(sample_weights->size() == labels.size(), ErrorCode::ShapeMismatch,
            "sample weight length mismatch");
  }
  LossResult r;
  r.dlogits = Tensor::zeros({n, k});
  r.loss = cross_entropy_rows<float>(logits.data.data(), n, k, labels.data(),
                                     sample_weights ? sample_weights->data() : nullptr,
                                     r.dlogits.data.data());
  return r;
}

Tensor softmax_rows(const Tensor& logits) {
  require(logits.rank() == 2, ErrorCode::ShapeMismatch,
          "logits must be [batch, classes], got " + logits.shape_str());
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  Tensor out = Tensor::zeros({n, k});
  for (int i = 0; i < n; ++i) {
    const float* row = logits.row(i, k);
    float* orow = out.row(i, k);
    double m = row[0];
    for (int j = 1; j < k; ++j) m = std::max(m, static_cast<double>(row[j]));
    double z = 0.0;
    for (int j = 0; j < k; ++j) {
      double e = std::exp(static_cast<double>(row[j]) - m);
      orow[j] = static_cast<float>(e);
      z += e;
    }
    for (int j = 0; j < k; ++j) orow[j] = static_cast<float>(orow[j] / z);
  }
  return out;
}

}  // namespace moe
