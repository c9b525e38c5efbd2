#pragma once

#include <string>
#include <vector>

#include "experts/expert.hpp"

namespace moe {

// Which activation slice feeds a pattern attribution network. OutputStats
// is architecture-agnostic: always (mean, max, population std) of the
// logits, width 3 regardless of the expert's class count.
enum class FeatureKind { OutputLogits, FinalFC, OutputStats };

FeatureKind feature_kind_from_string(const std::string& name);
std::string to_string(FeatureKind kind);
int feature_width(FeatureKind kind, int class_count);

void extract_features(FeatureKind kind, const float* logits, int class_count,
                      const float* final_fc, float* out);

// Feature rows plus boolean belongs-to-expert labels. Rows stay grouped by
// provenance (source dataset x traced expert), recorded in `groups`.
struct AttributionDataset {
  int width = 0;
  std::vector<float> features;
  std::vector<uint8_t> labels;

  struct Group {
    std::string dataset_tag;
    int expert_id = 0;
    uint64_t count = 0;
    uint8_t label = 0;
  };
  std::vector<Group> groups;

  size_t rows() const { return labels.size(); }
  const float* row(size_t i) const { return features.data() + i * width; }
  void validate() const;
};

// Traces every dataset through the expert and labels rows by whether the
// source is the expert's own training data. Datasets keep their native
// channels (the cross-feed pipeline adapts internally) but must already be
// at the expert's resolution. The positive set is standardized with the
// expert's stats; each negative with stats computed from itself.
AttributionDataset build_attribution_dataset(const ExpertModel& expert,
                                             const ImageDataset& positive,
                                             const std::vector<const ImageDataset*>& negatives,
                                             FeatureKind kind, int threads = 0);

// Appends traced rows for one (expert, dataset) pair; building block for
// both per-expert and merged attribution sets. source_norm carries the
// dataset's own standardization constants.
void append_attribution_rows(AttributionDataset& out, const ExpertModel& expert, int expert_id,
                             const ImageDataset& ds, const NormStats& source_norm, bool positive,
                             FeatureKind kind, int threads = 0);

// Versioned binary: "MOEA", u32 version, u32 header length, JSON header,
// row-major float32 features, then one byte per label.
void save_attribution(const AttributionDataset& ds, const std::string& path);
AttributionDataset load_attribution(const std::string& path);

}  // namespace moe
