#pragma once

#include <vector>

#include "gating/pan.hpp"

namespace moe {

// Merged attribution rows over every (expert, dataset) pair of a mixture:
// expert e traces dataset d (standardized with expert d's constants and
// channel-adapted through the cross-feed pipeline), labeled by d == e's own
// data. Rejects feature kinds whose width differs across experts
// (OutputLogits with unequal class counts). datasets[i] must be expert i's
// own split, in native channels.
AttributionDataset build_upan_dataset(const std::vector<const ExpertModel*>& experts,
                                      const std::vector<const ImageDataset*>& datasets,
                                      FeatureKind kind, int threads = 0);

// train_pan without an owning expert: adds per-feature standardization.
PANModel train_upan(const AttributionDataset& merged, FeatureKind kind,
                    const TrainConfig& config);

// SC2: the single UPAN reads every expert's features.
GatingDecision sc2_decide(const PANModel& upan, const MixtureTrace& trace, size_t sample);
double evaluate_sc2(const PANModel& upan, const MixtureTrace& trace, const MixedTestSet& mixed);
ScAccuracy evaluate_sc2_detailed(const PANModel& upan, const MixtureTrace& trace,
                                 const MixedTestSet& mixed);

struct CrossEvalResult {
  double attribution_accuracy = 0.0;
  double sc2_accuracy = 0.0;
};

// Applies a (possibly foreign-trained) UPAN to another mixture: attribution
// accuracy on that mixture's test-feature rows plus SC2 accuracy on its
// mixed test set. Rejects incompatible feature widths.
CrossEvalResult cross_evaluate_upan(const PANModel& upan, const AttributionDataset& foreign_test,
                                    const MixtureTrace& foreign_trace,
                                    const MixedTestSet& foreign_mixed);

// Image-to-expert router distilled from SC2 decisions: LeNet5 over
// 3-channel 32x32 inputs with one class per expert.
struct FpanModel {
  Network net;
  int expert_count = 0;
  NormStats norm;
  TrainConfig config;
};

struct FpanResult {
  FpanModel model;
  std::vector<int> teacher;  // SC2-selected expert per pool sample
  double teacher_agreement = 0.0;  // FPAN vs teacher on the training pool
  double routing_accuracy = 0.0;   // FPAN vs true source expert on the pool
};

// Trains the router on an unlabeled pool (a mixed set whose labels are
// ignored); teacher labels come from SC2 with the given UPAN.
FpanResult train_fpan(const PANModel& upan, const std::vector<const ExpertModel*>& experts,
                      const MixedTestSet& pool, const TrainConfig& config, int threads = 0);

int fpan_route(const FpanModel& fpan, const MixedSample& sample, int h, int w);

// Routing accuracy against the true source expert of each sample.
double evaluate_fpan_routing(const FpanModel& fpan, const MixedTestSet& mixed);

void save_fpan(const FpanModel& fpan, const std::string& path);
FpanModel load_fpan(const std::string& path);

}  // namespace moe
