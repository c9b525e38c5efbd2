#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "core/error.hpp"
#include "gating/augment.hpp"
#include "toy_mixture.hpp"

using namespace moe;

namespace {

std::vector<float> random_image(int c, int h, int w, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> img(static_cast<size_t>(c) * h * w);
  for (auto& v : img) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("augmentation spec parsing and validation") {
  AugmentationSpec s = AugmentationSpec::parse("gauss:0.05,0.1,0.3");
  CHECK(s.kind == AugmentationSpec::Kind::GaussianNoise);
  CHECK(s.params == std::vector<float>{0.05f, 0.1f, 0.3f});
  CHECK(AugmentationSpec::parse("hflip").params.empty());
  CHECK(AugmentationSpec::parse("crop:4").params == std::vector<float>{4.0f});
  CHECK_THROWS_AS(AugmentationSpec::parse("blur:1"), Error);
  CHECK_THROWS_AS(AugmentationSpec::parse("sharpen:-1"), Error);
  CHECK_THROWS_AS(AugmentationSpec::parse("hflip:1"), Error);
  CHECK_THROWS_AS(AugmentationSpec::parse("crop:1.5"), Error);

  auto passes = expand_passes({AugmentationSpec::parse("gauss:0.1,0.2"),
                               AugmentationSpec::parse("hflip")});
  CHECK(passes.size() == 3);
}

TEST_CASE("zero-strength augmentations are identities") {
  auto img = random_image(3, 16, 16, 7);
  Rng rng(1);

  auto sharpened = img;
  apply_augmentation(sharpened, 3, 16, 16, {AugmentationSpec::Kind::Sharpen, 0.0f}, rng);
  CHECK(sharpened == img);

  auto noisy = img;
  apply_augmentation(noisy, 3, 16, 16, {AugmentationSpec::Kind::GaussianNoise, 0.0f}, rng);
  CHECK(noisy == img);

  auto poisson = img;
  apply_augmentation(poisson, 3, 16, 16, {AugmentationSpec::Kind::PoissonNoise, 0.0f}, rng);
  CHECK(poisson == img);

  auto cropped = img;
  apply_augmentation(cropped, 3, 16, 16, {AugmentationSpec::Kind::RandomCrop, 0.0f}, rng);
  CHECK(cropped == img);
}

TEST_CASE("flips mirror the image and compose to the identity") {
  auto img = random_image(1, 8, 8, 9);
  Rng rng(2);
  auto flipped = img;
  apply_augmentation(flipped, 1, 8, 8, {AugmentationSpec::Kind::HFlip, 0.0f}, rng);
  CHECK(flipped[0] == img[7]);
  CHECK(flipped[8] == img[15]);
  apply_augmentation(flipped, 1, 8, 8, {AugmentationSpec::Kind::HFlip, 0.0f}, rng);
  CHECK(flipped == img);

  auto vflipped = img;
  apply_augmentation(vflipped, 1, 8, 8, {AugmentationSpec::Kind::VFlip, 0.0f}, rng);
  CHECK(vflipped[0] == img[56]);
  apply_augmentation(vflipped, 1, 8, 8, {AugmentationSpec::Kind::VFlip, 0.0f}, rng);
  CHECK(vflipped == img);
}

TEST_CASE("sharpen applies the unsharp mask against a box blur") {
  // flat image: blur == image, so any alpha is an identity
  std::vector<float> flat(64, 0.5f);
  Rng rng(3);
  auto out = flat;
  apply_augmentation(out, 1, 8, 8, {AugmentationSpec::Kind::Sharpen, 2.0f}, rng);
  for (float v : out) CHECK(v == doctest::Approx(0.5f));

  // a bright center pixel is amplified, then clamped to [0,1]
  std::vector<float> spike(25, 0.0f);
  spike[12] = 0.9f;
  out = spike;
  apply_augmentation(out, 1, 5, 5, {AugmentationSpec::Kind::Sharpen, 1.0f}, rng);
  CHECK(out[12] == doctest::Approx(1.0f));  // 0.9 + (0.9 - 0.1) > 1 clamps
  CHECK(out[11] < spike[11] + 1e-6f);
}

TEST_CASE("gaussian noise is seed-deterministic and roughly centered") {
  auto img = std::vector<float>(1024, 0.5f);
  auto a = img, b = img;
  Rng rng_a(42), rng_b(42);
  apply_augmentation(a, 1, 32, 32, {AugmentationSpec::Kind::GaussianNoise, 0.1f}, rng_a);
  apply_augmentation(b, 1, 32, 32, {AugmentationSpec::Kind::GaussianNoise, 0.1f}, rng_b);
  CHECK(a == b);
  double mean = 0;
  for (float v : a) mean += v;
  mean /= a.size();
  CHECK(mean == doctest::Approx(0.5).epsilon(0.05));
  for (float v : a) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("poisson noise keeps the expected scale") {
  auto img = std::vector<float>(4096, 0.25f);
  Rng rng(11);
  apply_augmentation(img, 1, 64, 64, {AugmentationSpec::Kind::PoissonNoise, 0.1f}, rng);
  double mean = 0;
  for (float v : img) mean += v;
  mean /= img.size();
  // Poisson(x*scale)/scale has mean x
  CHECK(mean == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("random crop zero-pads and shifts within the pad budget") {
  auto img = random_image(1, 8, 8, 13);
  for (auto& v : img) v = 0.25f + 0.5f * v;  // keep away from 0 so zeros are pad
  Rng rng(4);
  auto out = img;
  apply_augmentation(out, 1, 8, 8, {AugmentationSpec::Kind::RandomCrop, 2.0f}, rng);
  int zeros = 0;
  for (float v : out) zeros += v == 0.0f;
  // any nonzero offset introduces a zero border
  CHECK(out.size() == img.size());
  CHECK(zeros >= 0);
  // every nonzero output pixel exists somewhere in the input
  for (float v : out) {
    if (v == 0.0f) continue;
    CHECK(std::count(img.begin(), img.end(), v) > 0);
  }
}

TEST_CASE("multi-pass gating with no augmentations equals plain argmax") {
  auto toy = moe::testing::make_toy_mixture(3, 250, 60, 3);
  MixtureTrace trace = trace_mixture(toy.experts(), toy.mixed);
  Rng rng(5);
  for (size_t i = 0; i < 20; ++i) {
    GatingDecision base = decide_argmax(trace.concat_row(i));
    for (Aggregation agg : {Aggregation::Mean, Aggregation::Vote}) {
      GatingDecision d =
          multi_pass_decide(toy.experts(), toy.mixed.samples[i], 32, 32, {}, agg, rng);
      CHECK(d.global_class == base.global_class);
      CHECK(d.expert_id == base.expert_id);
    }
  }
}

TEST_CASE("identical passes collapse to the single-pass decision for both aggregations") {
  ConcatenatedLogits c = concat({{0.3f, 1.7f, -0.2f}, {0.9f, 1.1f}});
  std::vector<ConcatenatedLogits> same(5, c);
  GatingDecision base = decide_argmax(c);
  CHECK(aggregate_passes(same, Aggregation::Mean).global_class == base.global_class);
  CHECK(aggregate_passes(same, Aggregation::Vote).global_class == base.global_class);
}

TEST_CASE("vote aggregation takes the majority class and breaks ties to pass 0") {
  auto with_max_at = [](int idx) {
    ConcatenatedLogits c = concat({{0, 0, 0}, {0, 0}});
    c.flat[idx] = 1.0f;
    return c;
  };
  // votes {2, 2, 4} -> class 2
  GatingDecision d =
      aggregate_passes({with_max_at(2), with_max_at(2), with_max_at(4)}, Aggregation::Vote);
  CHECK(d.global_class == 2);
  // votes {4, 2, 2, 4} -> tie, falls back to the original (first) pass
  d = aggregate_passes({with_max_at(4), with_max_at(2), with_max_at(2), with_max_at(4)},
                       Aggregation::Vote);
  CHECK(d.global_class == 4);
  d = aggregate_passes({with_max_at(2), with_max_at(4), with_max_at(4), with_max_at(2)},
                       Aggregation::Vote);
  CHECK(d.global_class == 2);
}

TEST_CASE("mean aggregation is order-independent") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ConcatenatedLogits> passes;
    for (int p = 0; p < 4; ++p) {
      std::vector<float> a(3), b(2);
      for (auto& v : a) v = static_cast<float>(rng.uniform(-2, 2));
      for (auto& v : b) v = static_cast<float>(rng.uniform(-2, 2));
      passes.push_back(concat({a, b}));
    }
    GatingDecision base = aggregate_passes(passes, Aggregation::Mean);
    std::reverse(passes.begin(), passes.end());
    CHECK(aggregate_passes(passes, Aggregation::Mean).global_class == base.global_class);
  }
}

TEST_CASE("zero-strength augmentation sweep reproduces the naive argmax accuracy exactly") {
  auto toy = moe::testing::make_toy_mixture(7, 250, 80, 3);
  double naive_acc = evaluate_naive(toy.experts(), toy.mixed, NaiveStat::Argmax);
  AugmentedAccuracy acc = evaluate_augmented(
      toy.experts(), toy.mixed,
      {AugmentationSpec::parse("sharpen:0"), AugmentationSpec::parse("gauss:0")}, 99);
  CHECK(acc.mean == naive_acc);
  CHECK(acc.vote == naive_acc);
}

TEST_CASE("augmented evaluation is reproducible for a fixed seed") {
  auto toy = moe::testing::make_toy_mixture(9, 200, 60, 3);
  std::vector<AugmentationSpec> specs{AugmentationSpec::parse("gauss:0.3,0.5"),
                                      AugmentationSpec::parse("crop:4")};
  AugmentedAccuracy a = evaluate_augmented(toy.experts(), toy.mixed, specs, 1234, 2);
  AugmentedAccuracy b = evaluate_augmented(toy.experts(), toy.mixed, specs, 1234, 1);
  CHECK(a.mean == b.mean);  // thread count must not matter
  CHECK(a.vote == b.vote);
}
