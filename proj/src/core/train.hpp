#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "core/network.hpp"
#include "core/tensor.hpp"

namespace moe {

struct TrainConfig {
  float learning_rate = 0.01f;
  int epochs = 10;
  int batch_size = 64;
  uint64_t seed = 1;
  float momentum = 0.9f;

  void validate() const;
};

// Plain SGD with momentum: v <- momentum*v + g; w <- w - lr*v.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(const Network& net);

  // One minibatch step; returns the loss at the pre-update weights.
  // Throws ErrorCode::Numeric if a non-finite loss or gradient shows up.
  double step(Network& net, const Tensor& batch, const std::vector<int>& labels,
              const TrainConfig& config, const std::vector<float>* sample_weights = nullptr);

 private:
  std::vector<std::vector<float>> vel_w_, vel_b_;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
};

// Seeded-shuffle epoch driver over n samples; fill_batch assembles the
// input tensor and labels for the given sample indices.
using BatchFiller = std::function<void(const std::vector<int>& indices, Tensor& batch,
                                       std::vector<int>& labels, std::vector<float>& weights)>;

std::vector<EpochStats> run_sgd_epochs(Network& net, int sample_count, const TrainConfig& config,
                                       const BatchFiller& fill_batch);

// Convenience for in-memory feature matrices (PANs, toy tests):
// x is [n, d] or [n, c, h, w]; weights may be empty for uniform.
std::vector<EpochStats> fit_tensor(Network& net, const Tensor& x, const std::vector<int>& labels,
                                   const std::vector<float>& sample_weights,
                                   const TrainConfig& config);

}  // namespace moe
