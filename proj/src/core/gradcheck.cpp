#include "core/gradcheck.hpp"

#include <cmath>

#include "core/error.hpp"
#include "core/network_impl.hpp"
#include "core/rng.hpp"

namespace moe {

namespace {

double loss_at(const NetT<double>& net, const std::vector<double>& batch, int n,
               const std::vector<int>& labels) {
  NetT<double>::Workspace ws;
  net.forward(batch.data(), n, ws, /*keep_for_backward=*/false);
  const int k = net.shapes.back().dim;
  return cross_entropy_rows<double>(ws.acts.back().data(), n, k, labels.data(), nullptr, nullptr);
}

}  // namespace

GradCheckResult gradient_check(const Network& net, const Tensor& batch,
                               const std::vector<int>& labels, double epsilon, int max_weights,
                               uint64_t seed) {
  require(epsilon >= 1e-4 && epsilon <= 1e-2, ErrorCode::InvalidArgument,
          "gradient check epsilon must lie in [1e-4, 1e-2]");
  require(max_weights > 0, ErrorCode::InvalidArgument, "max_weights must be positive");
  const auto& fimpl = net.impl();
  const int n = batch_size_for(fimpl.input, batch);
  require(static_cast<size_t>(n) == labels.size(), ErrorCode::ShapeMismatch,
          "batch/label count mismatch");

  NetT<double> dnet(fimpl.input, fimpl.specs);
  for (size_t l = 0; l < fimpl.specs.size(); ++l) {
    dnet.weights[l].assign(fimpl.weights[l].begin(), fimpl.weights[l].end());
    dnet.biases[l].assign(fimpl.biases[l].begin(), fimpl.biases[l].end());
  }
  std::vector<double> dbatch(batch.data.begin(), batch.data.end());

  // analytic gradients
  NetT<double>::Workspace ws;
  dnet.forward(dbatch.data(), n, ws, /*keep_for_backward=*/true);
  const int k = dnet.shapes.back().dim;
  std::vector<double> dlogits(static_cast<size_t>(n) * k);
  cross_entropy_rows<double>(ws.acts.back().data(), n, k, labels.data(), nullptr, dlogits.data());
  dnet.backward(dbatch.data(), dlogits.data(), ws);

  // flat index space over every (weight, bias) buffer
  struct Slot {
    size_t layer;
    bool bias;
    size_t count;
  };
  std::vector<Slot> slots;
  size_t total = 0;
  for (size_t l = 0; l < dnet.specs.size(); ++l) {
    if (dnet.weights[l].empty()) continue;
    slots.push_back({l, false, dnet.weights[l].size()});
    slots.push_back({l, true, dnet.biases[l].size()});
    total += dnet.weights[l].size() + dnet.biases[l].size();
  }
  require(total > 0, ErrorCode::InvalidArgument, "network has no parameters to check");

  Rng rng(mix_seed(seed, 0x67726164));
  GradCheckResult result;
  const int samples = static_cast<int>(std::min<size_t>(max_weights, total));
  for (int s = 0; s < samples; ++s) {
    size_t flat = rng.below(total);
    double* value = nullptr;
    double analytic = 0.0;
    for (const Slot& slot : slots) {
      if (flat < slot.count) {
        if (slot.bias) {
          value = &dnet.biases[slot.layer][flat];
          analytic = ws.dB[slot.layer][flat];
        } else {
          value = &dnet.weights[slot.layer][flat];
          analytic = ws.dW[slot.layer][flat];
        }
        break;
      }
      flat -= slot.count;
    }
    const double saved = *value;
    *value = saved + epsilon;
    const double lp = loss_at(dnet, dbatch, n, labels);
    *value = saved - epsilon;
    const double lm = loss_at(dnet, dbatch, n, labels);
    *value = saved;
    const double numeric = (lp - lm) / (2.0 * epsilon);
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
    result.max_rel_error = std::max(result.max_rel_error, std::fabs(analytic - numeric) / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace moe
