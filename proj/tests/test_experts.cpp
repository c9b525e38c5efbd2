#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <vector>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "experts/checkpoint.hpp"
#include "experts/expert.hpp"

#include <nlohmann/json.hpp>

using namespace moe;
namespace fs = std::filesystem;

namespace {

// Two easily separable classes: a bright square whose corner position is
// class-dependent, over a noisy background.
ImageDataset blocky_dataset(int n, int channels, int classes, uint64_t seed) {
  ImageDataset ds;
  ds.name = "blocky";
  ds.class_count = classes;
  ds.h = 32;
  ds.w = 32;
  ds.c = channels;
  Rng rng(seed);
  ds.pixels.resize(static_cast<size_t>(n) * channels * 32 * 32);
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    int cls = static_cast<int>(rng.below(classes));
    ds.labels[i] = static_cast<uint8_t>(cls);
    uint8_t* img = ds.image(i);
    for (size_t j = 0; j < ds.image_bytes(); ++j) img[j] = static_cast<uint8_t>(rng.below(40));
    int ox = 2 + (cls % 4) * 7;
    int oy = 2 + (cls / 4) * 7;
    for (int ch = 0; ch < channels; ++ch)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) img[(ch * 32 + oy + y) * 32 + ox + x] = 240;
  }
  return ds;
}

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("lenet5 builder produces the documented geometry") {
  ExpertModel m15 = build_lenet5(1, 5);
  CHECK(m15.net.logits_width() == 5);
  CHECK(m15.net.layer_shapes()[m15.final_fc_layer] == IOShape::flat(kFinalFcWidth));

  ExpertModel m310 = build_lenet5(3, 10);
  CHECK(m310.net.logits_width() == 10);

  // parameter count against the per-layer closed forms
  auto expect_params = [](int c, int k) {
    int64_t conv1 = 6 * (c * 25) + 6;
    int64_t conv2 = 16 * (6 * 25) + 16;
    int64_t d1 = 120 * 400 + 120;
    int64_t d2 = 84 * 120 + 84;
    int64_t d3 = k * 84 + k;
    return conv1 + conv2 + d1 + d2 + d3;
  };
  CHECK(m15.net.parameter_count() == expect_params(1, 5));
  CHECK(m310.net.parameter_count() == expect_params(3, 10));

  CHECK_THROWS_AS(build_lenet5(2, 5), Error);
  CHECK_THROWS_AS(build_lenet5(1, 0), Error);
}

TEST_CASE("untrained balanced 10-class accuracy sits near chance") {
  ExpertModel model = build_lenet5(1, 10);
  model.net.init_weights(13);
  model.norm = NormStats{{0.2f}, {0.3f}};
  ImageDataset ds = blocky_dataset(1000, 1, 10, 5);
  double acc = evaluate(model, ds);
  CHECK(acc > 0.05);
  CHECK(acc < 0.15);
}

TEST_CASE("expert overfits a 50-sample subset to perfect train accuracy") {
  ImageDataset ds = blocky_dataset(50, 1, 2, 11);
  ExpertModel model = build_lenet5(1, 2);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 3;
  auto history = train_expert(model, ds, cfg);
  CHECK(history.size() == 20);
  CHECK(history.back().mean_loss < history.front().mean_loss);
  CHECK(evaluate(model, ds) == doctest::Approx(1.0));
}

TEST_CASE("trained expert beats chance on held-out data by at least 5x") {
  ImageDataset train = blocky_dataset(800, 3, 8, 21);
  ImageDataset test = blocky_dataset(200, 3, 8, 22);
  ExpertModel model = build_lenet5(3, 8);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.seed = 4;
  train_expert(model, train, cfg);
  double acc = evaluate(model, test);
  CHECK(acc >= 5.0 * (1.0 / 8));
}

TEST_CASE("evaluate and train reject mismatched datasets") {
  ExpertModel model = build_lenet5(1, 2);
  model.norm = NormStats{{0.0f}, {1.0f}};
  ImageDataset rgb = blocky_dataset(4, 3, 2, 31);
  CHECK_THROWS_AS(evaluate(model, rgb), Error);
  TrainConfig cfg;
  CHECK_THROWS_AS(train_expert(model, rgb, cfg), Error);

  ImageDataset adapted = adapt_to_expert(rgb, model);
  CHECK(adapted.c == 1);
  CHECK(adapted.h == 32);
  model.net.init_weights(1);
  CHECK_NOTHROW(evaluate(model, adapted));
}

TEST_CASE("infer_with_trace returns the logits and 84-wide final FC features") {
  ExpertModel model = build_lenet5(1, 5);
  model.net.init_weights(7);
  model.norm = NormStats{{0.1f}, {0.5f}};
  ImageDataset ds = blocky_dataset(3, 1, 5, 41);
  Tensor batch = prepare_expert_batch(model, ds, {0, 1, 2});
  TraceFeatures f = infer_with_trace(model, batch);
  CHECK(f.logits.shape == std::vector<int>{3, 5});
  CHECK(f.final_fc.shape == std::vector<int>{3, kFinalFcWidth});
  for (float v : f.final_fc.data) CHECK(v >= 0.0f);  // post-relu

  Tensor direct = model.net.forward_logits(batch);
  CHECK(f.logits.data == direct.data);
}

TEST_CASE("cross-feed preparation: same-channel inputs match the training pipeline exactly") {
  ExpertModel expert = build_lenet5(1, 2);
  expert.norm = NormStats{{0.25f}, {0.5f}};
  ImageDataset gray = blocky_dataset(3, 1, 2, 51);
  Tensor expect = prepare_expert_batch(expert, gray, {0, 2});
  Tensor got;
  prepare_cross_batch(expert, gray, expert.norm, {0, 2}, got);
  CHECK(got.shape == expect.shape);
  CHECK(got.data == expect.data);
}

TEST_CASE("cross-feed preparation: cross-channel inputs requantize and adapt without consumer stats") {
  // with identity source stats the standardized image sits on the uint8
  // grid, so the requantized result must equal the uint8 adaptation path
  NormStats identity1{{0.0f}, {1.0f}};
  NormStats identity3{{0.0f, 0.0f, 0.0f}, {1.0f, 1.0f, 1.0f}};

  ExpertModel gray_expert = build_lenet5(1, 2);
  gray_expert.norm = NormStats{{0.25f}, {0.5f}};  // must NOT be applied
  ImageDataset rgb = blocky_dataset(2, 3, 2, 52);
  ImageDataset rgb_as_gray = adapt_channels(rgb, 1);
  Tensor got;
  prepare_cross_batch(gray_expert, rgb, identity3, {0, 1}, got);
  for (size_t i = 0; i < 2; ++i)
    for (size_t j = 0; j < 32 * 32; ++j)
      CHECK(got.data[i * 1024 + j] == u8_to_unit(rgb_as_gray.image(i)[j]));

  ExpertModel rgb_expert = build_lenet5(3, 2);
  rgb_expert.norm = NormStats{{0.2f, 0.3f, 0.4f}, {0.5f, 0.6f, 0.7f}};
  ImageDataset gray = blocky_dataset(2, 1, 2, 53);
  ImageDataset gray_as_rgb = adapt_channels(gray, 3);
  prepare_cross_batch(rgb_expert, gray, identity1, {0}, got);
  for (size_t j = 0; j < gray_as_rgb.image_bytes(); ++j)
    CHECK(got.data[j] == u8_to_unit(gray_as_rgb.image(0)[j]));

  // values far outside [0,1] after source standardization saturate
  NormStats shifted{{0.9f, 0.9f, 0.9f}, {0.05f, 0.05f, 0.05f}};
  prepare_cross_batch(gray_expert, rgb, shifted, {0}, got);
  for (float v : got.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("checkpoint round-trip reproduces weights and evaluation exactly") {
  ImageDataset ds = blocky_dataset(80, 1, 2, 61);
  ExpertModel model = build_lenet5(1, 2);
  model.dataset_tag = "blocky";
  model.classes = {0, 1};
  model.global_offset = 5;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 8;
  train_expert(model, ds, cfg);
  model.final_accuracy = evaluate(model, ds);

  std::string path = temp_path("moegate_ckpt_test.moec");
  save_checkpoint(model, path);
  ExpertModel loaded = load_checkpoint(path);

  CHECK(loaded.dataset_tag == "blocky");
  CHECK(loaded.classes == std::vector<int>{0, 1});
  CHECK(loaded.global_offset == 5);
  CHECK(loaded.config.seed == 8);
  auto pa = model.net.snapshot_params();
  auto pb = loaded.net.snapshot_params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].data == pb[i].data);
  CHECK(evaluate(loaded, ds) == model.final_accuracy);
  fs::remove(path);
}

TEST_CASE("checkpoint version mismatch is rejected naming both versions") {
  std::string path = temp_path("moegate_ckpt_version.moec");
  {
    ExpertModel model = build_lenet5(1, 2);
    model.norm = NormStats{{0.0f}, {1.0f}};
    save_checkpoint(model, path);
  }
  // bump the stored version field (offset 4)
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  try {
    load_checkpoint(path);
    FAIL("expected version error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Format);
    CHECK(std::string(e.what()).find("99") != std::string::npos);
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
  fs::remove(path);
}
