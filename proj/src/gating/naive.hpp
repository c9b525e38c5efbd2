#pragma once

#include <string>
#include <vector>

#include "data/mixture.hpp"
#include "experts/expert.hpp"

namespace moe {

// Per-expert logit segments concatenated in mixture order. Segment offsets
// coincide with global label offsets because each segment is exactly one
// expert's class range.
struct ConcatenatedLogits {
  std::vector<float> flat;
  std::vector<int> offsets;  // one per segment, ascending, offsets[0] == 0

  int segments() const { return static_cast<int>(offsets.size()); }
  int seg_begin(int s) const { return offsets[s]; }
  int seg_end(int s) const {
    return s + 1 < segments() ? offsets[s + 1] : static_cast<int>(flat.size());
  }
  int segment_of(int flat_index) const;
};

ConcatenatedLogits concat(const std::vector<std::vector<float>>& per_expert);

enum class GatePath { Statistic, ExclusivePan, Fallback };

struct GatingDecision {
  int expert_id = 0;
  int local_class = 0;
  int global_class = 0;
  GatePath path = GatePath::Statistic;
};

inline GatingDecision with_path(GatingDecision d, GatePath p) {
  d.path = p;
  return d;
}

enum class NaiveStat { Argmax, Ratio, OverallRatio, Q3Diff, Std };

NaiveStat naive_stat_from_string(const std::string& name);
std::string to_string(NaiveStat stat);

// Largest logit anywhere; ties break toward the lowest flat index.
GatingDecision decide_argmax(const ConcatenatedLogits& c);

// Per segment, each logit over the segment sum; zero-sum segments are
// excluded (error when every segment is). Raw logits, taken literally:
// negative values are expected to misbehave.
GatingDecision decide_ratio(const ConcatenatedLogits& c);

// Each logit over the sum of the whole concatenation; a zero total is
// rejected as undefined. With a negative total the ranking inverts; this
// too is the literal reading.
GatingDecision decide_overall_ratio(const ConcatenatedLogits& c);

// Per segment, max minus the linear-interpolation third quartile; the
// winning expert has the largest difference, the class is its argmax.
GatingDecision decide_q3diff(const ConcatenatedLogits& c);

// The winning expert has the smallest population standard deviation of its
// logits; the class is its argmax.
GatingDecision decide_std(const ConcatenatedLogits& c);

GatingDecision decide(const ConcatenatedLogits& c, NaiveStat stat);

// Linear-interpolation quantile of a sorted ascending range.
double sorted_quantile(const std::vector<float>& sorted, double q);

// Cached per-expert features over one mixed test set; every gating
// evaluator reads from here so per-sample pipelines stay identical.
struct MixtureTrace {
  std::vector<Tensor> logits;    // per expert: [n, class_count_e]
  std::vector<Tensor> final_fc;  // per expert: [n, 84]
  size_t sample_count = 0;

  ConcatenatedLogits concat_row(size_t sample) const;
};

MixtureTrace trace_mixture(const std::vector<const ExpertModel*>& experts,
                           const MixedTestSet& mixed, int threads = 0);

double evaluate_naive(const MixtureTrace& trace, const MixedTestSet& mixed, NaiveStat stat);
double evaluate_naive(const std::vector<const ExpertModel*>& experts, const MixedTestSet& mixed,
                      NaiveStat stat, int threads = 0);

}  // namespace moe
