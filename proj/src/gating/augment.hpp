#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "gating/naive.hpp"

namespace moe {

// One augmentation family plus its per-pass parameter sweep. An empty
// parameter list means a single pass at the default strength. Poisson noise
// is labeled by sigma (scale = 1/sigma^2) so sweep labels line up with the
// Gaussian ones.
struct AugmentationSpec {
  enum class Kind { Sharpen, GaussianNoise, PoissonNoise, HFlip, VFlip, RandomCrop };

  Kind kind{};
  std::vector<float> params;

  // "sharpen:0.1,0.3", "gauss:0.5", "hflip", "crop:4", ...
  static AugmentationSpec parse(const std::string& text);
  std::string to_string() const;
  void validate() const;
};

struct AugPass {
  AugmentationSpec::Kind kind{};
  float param = 0.0f;
};

// Flattens specs into the ordered pass list (one pass per parameter).
std::vector<AugPass> expand_passes(const std::vector<AugmentationSpec>& specs);

// In-place on a [0,1] float image (CHW); clamps back to [0,1].
void apply_augmentation(std::vector<float>& image, int c, int h, int w, const AugPass& pass,
                        Rng& rng);

enum class Aggregation { Mean, Vote };
Aggregation aggregation_from_string(const std::string& name);
std::string to_string(Aggregation agg);

// Aggregates per-pass concatenations (original pass first): elementwise
// mean (double accumulation) then argmax, or majority vote over per-pass
// argmax decisions with ties falling back to the un-augmented pass.
GatingDecision aggregate_passes(const std::vector<ConcatenatedLogits>& concats, Aggregation agg);

// Original pass first, then one pass per augmentation.
GatingDecision multi_pass_decide(const std::vector<const ExpertModel*>& experts,
                                 const MixedSample& sample, int h, int w,
                                 const std::vector<AugPass>& passes, Aggregation agg, Rng& rng);

struct AugmentedAccuracy {
  double mean = 0.0;
  double vote = 0.0;
  double get(Aggregation agg) const { return agg == Aggregation::Mean ? mean : vote; }
};

// Evaluates both aggregations over one shared set of augmented passes.
// Per-sample RNG streams are derived from (seed, sample index), so results
// are independent of threading and evaluation order.
AugmentedAccuracy evaluate_augmented(const std::vector<const ExpertModel*>& experts,
                                     const MixedTestSet& mixed,
                                     const std::vector<AugmentationSpec>& specs, uint64_t seed,
                                     int threads = 0);

}  // namespace moe
