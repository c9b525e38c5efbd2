#include "core/train.hpp"

#include <cmath>
#include <numeric>

#include "core/error.hpp"
#include "core/network_impl.hpp"
#include "core/rng.hpp"

namespace moe {

void TrainConfig::validate() const {
  require(learning_rate > 0.0f || learning_rate == 0.0f, ErrorCode::InvalidArgument,
          "learning rate must be nonnegative");
  require(std::isfinite(learning_rate) && learning_rate >= 0.0f, ErrorCode::InvalidArgument,
          "learning rate must be finite and nonnegative");
  require(epochs > 0, ErrorCode::InvalidArgument, "epochs must be positive");
  require(batch_size > 0, ErrorCode::InvalidArgument, "batch size must be positive");
  require(momentum >= 0.0f && momentum < 1.0f, ErrorCode::InvalidArgument,
          "momentum must lie in [0,1)");
}

SgdOptimizer::SgdOptimizer(const Network& net) {
  const auto& impl = net.impl();
  vel_w_.resize(impl.specs.size());
  vel_b_.resize(impl.specs.size());
  for (size_t l = 0; l < impl.specs.size(); ++l) {
    vel_w_[l].assign(impl.weights[l].size(), 0.0f);
    vel_b_[l].assign(impl.biases[l].size(), 0.0f);
  }
}

namespace {

bool finite_buffer(const std::vector<float>& v) {
  for (float x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

double SgdOptimizer::step(Network& net, const Tensor& batch, const std::vector<int>& labels,
                          const TrainConfig& config, const std::vector<float>* sample_weights) {
  config.validate();
  auto& impl = net.impl();
  const int n = batch_size_for(impl.input, batch);
  require(n > 0 && static_cast<size_t>(n) == labels.size(), ErrorCode::ShapeMismatch,
          "batch/label count mismatch");

  NetT<float>::Workspace ws;
  impl.forward(batch.data.data(), n, ws, /*keep_for_backward=*/true);

  const int k = impl.shapes.back().dim;
  std::vector<float> dlogits(static_cast<size_t>(n) * k);
  double loss = cross_entropy_rows<float>(ws.acts.back().data(), n, k, labels.data(),
                                          sample_weights ? sample_weights->data() : nullptr,
                                          dlogits.data());
  require(std::isfinite(loss), ErrorCode::Numeric, "non-finite training loss; aborting run");

  impl.backward(batch.data.data(), dlogits.data(), ws);

  for (size_t l = 0; l < impl.specs.size(); ++l) {
    if (impl.weights[l].empty()) continue;
    require(finite_buffer(ws.dW[l]) && finite_buffer(ws.dB[l]), ErrorCode::Numeric,
            "non-finite gradient in layer " + std::to_string(l) + " (" +
                impl.specs[l].to_string() + "); aborting run");
    const float lr = config.learning_rate;
    const float mom = config.momentum;
    for (size_t i = 0; i < impl.weights[l].size(); ++i) {
      vel_w_[l][i] = mom * vel_w_[l][i] + ws.dW[l][i];
      impl.weights[l][i] -= lr * vel_w_[l][i];
    }
    for (size_t i = 0; i < impl.biases[l].size(); ++i) {
      vel_b_[l][i] = mom * vel_b_[l][i] + ws.dB[l][i];
      impl.biases[l][i] -= lr * vel_b_[l][i];
    }
  }
  return loss;
}

std::vector<EpochStats> run_sgd_epochs(Network& net, int sample_count, const TrainConfig& config,
                                       const BatchFiller& fill_batch) {
  config.validate();
  require(sample_count > 0, ErrorCode::InvalidArgument, "cannot train on an empty dataset");
  SgdOptimizer opt(net);
  std::vector<int> order(sample_count);
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochStats> history;
  Tensor batch;
  std::vector<int> labels;
  std::vector<float> weights;
  std::vector<int> indices;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(mix_seed(config.seed, 0x45504f43u + static_cast<uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    int batches = 0;
    for (int start = 0; start < sample_count; start += config.batch_size) {
      const int bn = std::min(config.batch_size, sample_count - start);
      indices.assign(order.begin() + start, order.begin() + start + bn);
      fill_batch(indices, batch, labels, weights);
      loss_sum += opt.step(net, batch, labels, config, weights.empty() ? nullptr : &weights);
      ++batches;
    }
    history.push_back({epoch + 1, loss_sum / batches});
  }
  return history;
}

std::vector<EpochStats> fit_tensor(Network& net, const Tensor& x, const std::vector<int>& labels,
                                   const std::vector<float>& sample_weights,
                                   const TrainConfig& config) {
  const int n = x.dim(0);
  require(static_cast<size_t>(n) == labels.size(), ErrorCode::ShapeMismatch,
          "sample/label count mismatch");
  require(sample_weights.empty() || sample_weights.size() == labels.size(),
          ErrorCode::ShapeMismatch, "sample weight length mismatch");
  const int64_t stride = x.numel() / n;
  std::vector<int> row_shape(x.shape.begin() + 1, x.shape.end());
  return run_sgd_epochs(
      net, n, config,
      [&](const std::vector<int>& idx, Tensor& batch, std::vector<int>& blabels,
          std::vector<float>& bweights) {
        std::vector<int> shape{static_cast<int>(idx.size())};
        shape.insert(shape.end(), row_shape.begin(), row_shape.end());
        batch.shape = shape;
        batch.data.resize(idx.size() * stride);
        blabels.resize(idx.size());
        bweights.clear();
        if (!sample_weights.empty()) bweights.resize(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) {
          const float* src = x.data.data() + static_cast<size_t>(idx[i]) * stride;
          std::copy(src, src + stride, batch.data.begin() + i * stride);
          blabels[i] = labels[idx[i]];
          if (!sample_weights.empty()) bweights[i] = sample_weights[idx[i]];
        }
      });
}

}  // namespace moe
