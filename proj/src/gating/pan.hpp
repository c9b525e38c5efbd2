#pragma once

#include <string>
#include <vector>

#include "gating/features.hpp"
#include "gating/naive.hpp"

namespace moe {

// Pattern attribution network: dense width -> 64 -> 32 -> 2. Returns true
// iff the true-class logit strictly exceeds the false-class logit. UPANs
// are the same model without an owning expert, optionally carrying
// per-feature standardization stats computed on their training rows.
struct PANModel {
  Network net;
  FeatureKind kind{};
  int input_width = 0;
  int owner_expert = -1;  // -1 for a universal PAN
  NormStats feature_norm;  // empty means identity
  TrainConfig config;

  bool is_universal() const { return owner_expert < 0; }
};

PANModel make_pan(FeatureKind kind, int input_width, int owner_expert = -1);

// Two-way cross entropy with inverse-frequency sample weights balancing the
// true/false classes.
PANModel train_pan(const AttributionDataset& ds, FeatureKind kind, const TrainConfig& config,
                   int owner_expert = -1);

struct Attribution {
  bool belongs = false;
  float confidence = 0.0f;  // softmax probability of "belongs"
};

Attribution pan_attribute(const PANModel& pan, const float* features);

// Fraction of rows whose boolean attribution matches the label.
double evaluate_pan(const PANModel& pan, const AttributionDataset& test);

// Smart-coordinator selection rule shared by SC1 and SC2: exactly one true
// flag picks that expert's own argmax; anything else falls back to plain
// argmax over the whole concatenation.
GatingDecision sc_decide_from_flags(const std::vector<bool>& flags, const ConcatenatedLogits& c);

// SC1: one PAN per expert, each reading its own expert's features.
GatingDecision sc1_decide(const std::vector<const PANModel*>& pans, const MixtureTrace& trace,
                          size_t sample);
double evaluate_sc1(const std::vector<const PANModel*>& pans, const MixtureTrace& trace,
                    const MixedTestSet& mixed);

struct ScAccuracy {
  double accuracy = 0.0;
  size_t exclusive = 0;  // samples decided by a single true PAN
  size_t fallback = 0;
};
ScAccuracy evaluate_sc1_detailed(const std::vector<const PANModel*>& pans,
                                 const MixtureTrace& trace, const MixedTestSet& mixed);

void save_pan(const PANModel& pan, const std::string& path);
PANModel load_pan(const std::string& path);

}  // namespace moe
