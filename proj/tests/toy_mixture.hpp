#pragma once

// Shared fixtures: two tiny synthetic "datasets" with disjoint appearance
// (bright block position encodes the class; dataset B is inverted video so
// the two are trivially distinguishable), experts trained on them, and the
// mixed test set. Small enough to train in seconds.

#include <cstdint>
#include <vector>

#include "core/rng.hpp"
#include "data/mixture.hpp"
#include "experts/expert.hpp"

namespace moe::testing {

inline ImageDataset toy_dataset(int n, int channels, int classes, uint64_t seed, bool inverted,
                                const std::string& name, int hw = 28) {
  ImageDataset ds;
  ds.name = name;
  ds.class_count = classes;
  ds.h = hw;
  ds.w = hw;
  ds.c = channels;
  Rng rng(seed);
  ds.pixels.resize(static_cast<size_t>(n) * channels * hw * hw);
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    int cls = static_cast<int>(rng.below(classes));
    ds.labels[i] = static_cast<uint8_t>(cls);
    uint8_t* img = ds.image(i);
    for (size_t j = 0; j < ds.image_bytes(); ++j)
      img[j] = static_cast<uint8_t>(rng.below(30) + (inverted ? 200 : 0));
    int ox = 2 + (cls % 3) * 8;
    int oy = 2 + (cls / 3) * 8;
    for (int ch = 0; ch < channels; ++ch)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
          img[(ch * hw + oy + y) * hw + ox + x] = inverted ? 10 : 240;
  }
  return ds;
}

struct ToyMixture {
  ImageDataset train_a, test_a, train_b, test_b;
  ExpertModel expert_a = build_lenet5(1, 3);
  ExpertModel expert_b = build_lenet5(3, 2);
  MixtureSpec spec;
  MixedTestSet mixed;

  std::vector<const ExpertModel*> experts() const { return {&expert_a, &expert_b}; }
};

// Expert A: 3 classes on 28x28 grayscale. Expert B: 2 classes on 32x32 RGB
// inverted video. Mixed set holds both test sets with global labels 0..4.
inline ToyMixture make_toy_mixture(uint64_t seed = 1, int train_n = 400, int test_n = 120,
                                   int epochs = 4) {
  ToyMixture t;
  t.train_a = toy_dataset(train_n, 1, 3, mix_seed(seed, 1), false, "toy-a", 28);
  t.test_a = toy_dataset(test_n, 1, 3, mix_seed(seed, 2), false, "toy-a", 28);
  t.train_b = toy_dataset(train_n, 3, 2, mix_seed(seed, 3), true, "toy-b", 32);
  t.test_b = toy_dataset(test_n, 3, 2, mix_seed(seed, 4), true, "toy-b", 32);

  t.expert_a.dataset_tag = "toy-a";
  t.expert_b.dataset_tag = "toy-b";
  t.expert_b.global_offset = 3;

  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = seed;
  train_expert(t.expert_a, adapt_to_expert(t.train_a, t.expert_a), cfg);
  train_expert(t.expert_b, adapt_to_expert(t.train_b, t.expert_b), cfg);

  t.spec = make_mixture_spec({3, 2}, {"toy-a", "toy-b"});
  t.mixed = build_mixed_testset(t.spec, {&t.test_a, &t.test_b}, seed);
  return t;
}

}  // namespace moe::testing
