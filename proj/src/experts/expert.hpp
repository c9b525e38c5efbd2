#pragma once

#include <string>
#include <vector>

#include "core/network.hpp"
#include "core/train.hpp"
#include "data/dataset.hpp"

namespace moe {

// A trained LeNet5-style expert plus everything needed to reproduce its
// input pipeline: channel spec, class mapping, normalization constants.
struct ExpertModel {
  Network net;
  int in_channels = 1;
  int class_count = 0;
  std::string dataset_tag;
  std::vector<int> classes;  // original label ids, in remap order
  int global_offset = 0;
  NormStats norm;
  TrainConfig config;
  double final_accuracy = -1.0;
  int final_fc_layer = -1;  // trace index of the post-relu penultimate dense output

  IOShape input_shape() const { return net.input_shape(); }
};

inline constexpr int kExpertInputSize = 32;
inline constexpr int kFinalFcWidth = 84;

// conv(6,5x5) -> relu -> pool -> conv(16,5x5) -> relu -> pool -> flatten
// -> dense(120) -> relu -> dense(84) -> relu -> dense(class_count),
// consuming in_channels x 32 x 32 inputs.
ExpertModel build_lenet5(int in_channels, int class_count);

// Pads to 32x32 and converts channels so the dataset matches the expert's
// input spec. Labels are untouched.
ImageDataset adapt_to_expert(const ImageDataset& ds, const ExpertModel& model);

// Trains on the expert's own (already adapted) dataset; computes and stores
// the normalization stats from it first. Single-threaded, deterministic.
std::vector<EpochStats> train_expert(ExpertModel& model, const ImageDataset& train_ds,
                                     const TrainConfig& config);

// Top-1 accuracy under argmax of the logits. The dataset must already match
// the expert's input spec.
double evaluate(const ExpertModel& model, const ImageDataset& test_ds, int threads = 0);

struct TraceFeatures {
  Tensor logits;    // [n, class_count]
  Tensor final_fc;  // [n, 84]
};

// Forward pass returning exactly the two gating-feature tensors.
TraceFeatures infer_with_trace(const ExpertModel& model, const Tensor& normalized_batch);

// Assembles a normalized input batch from dataset rows using the expert's
// stored stats.
Tensor prepare_expert_batch(const ExpertModel& model, const ImageDataset& ds,
                            const std::vector<int>& indices);

// Gating-time path for one [0,1] float image in its native channel count.
// The image is standardized once with its SOURCE dataset's constants; a
// consumer with the same channel count reads that directly, while a
// cross-channel consumer gets the standardized image re-quantized to the
// uint8 grid (saturating), channel-adapted (replicate / rounded luminance)
// and fed on the [0,1] scale with no further standardization. `out` must
// hold consumer.in_channels*h*w floats.
void prepare_cross_image(const ExpertModel& consumer, const float* pixels, int channels, int h,
                         int w, const NormStats& source_norm, float* out);

// Same pipeline over dataset rows.
void prepare_cross_batch(const ExpertModel& consumer, const ImageDataset& ds,
                         const NormStats& source_norm, const std::vector<int>& indices,
                         Tensor& out);

}  // namespace moe
