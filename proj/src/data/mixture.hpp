#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "data/dataset.hpp"

namespace moe {

struct MixtureComponent {
  std::string dataset_tag;
  int expert_id = 0;
  int global_offset = 0;
  int class_count = 0;
};

// Ordered experts with disjoint, contiguous global label ranges starting
// at 0; the concatenation order everywhere follows this order.
struct MixtureSpec {
  std::vector<MixtureComponent> components;

  int total_classes() const;
  int global_label(int expert_id, int local_class) const;
  int expert_for_global(int global_class) const;
  void validate() const;
};

MixtureSpec make_mixture_spec(const std::vector<int>& class_counts,
                              const std::vector<std::string>& tags);

struct MixedSample {
  std::vector<uint8_t> pixels;  // c * h * w
  int channels = 0;
  int global_label = 0;
  int component = 0;  // index into MixtureSpec.components
};

struct MixedTestSet {
  int h = 0, w = 0;
  MixtureSpec spec;
  std::vector<MixedSample> samples;

  size_t size() const { return samples.size(); }
  std::vector<size_t> global_histogram() const;
};

// Interleaves the component test sets (each padded to target_h x target_w,
// native channels) with global labels, shuffled by seed.
MixedTestSet build_mixed_testset(const MixtureSpec& spec,
                                 const std::vector<const ImageDataset*>& test_sets, uint64_t seed,
                                 int target_h = 32, int target_w = 32);

}  // namespace moe
