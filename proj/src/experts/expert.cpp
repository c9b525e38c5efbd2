#include "experts/expert.hpp"

#include <atomic>
#include <cmath>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace moe {

ExpertModel build_lenet5(int in_channels, int class_count) {
  require(in_channels == 1 || in_channels == 3, ErrorCode::InvalidArgument,
          "expert input channels must be 1 or 3");
  require(class_count > 0, ErrorCode::InvalidArgument, "class count must be positive");
  std::vector<LayerSpec> chain{
      LayerSpec::conv(6, 5),  LayerSpec::relu(),        LayerSpec::maxpool(2),
      LayerSpec::conv(16, 5), LayerSpec::relu(),        LayerSpec::maxpool(2),
      LayerSpec::flatten(),   LayerSpec::dense(120),    LayerSpec::relu(),
      LayerSpec::dense(kFinalFcWidth), LayerSpec::relu(), LayerSpec::dense(class_count),
  };
  ExpertModel model{
      .net = Network(IOShape::image(in_channels, kExpertInputSize, kExpertInputSize),
                     std::move(chain)),
      .in_channels = in_channels,
      .class_count = class_count,
  };
  model.final_fc_layer = 10;
  return model;
}

ImageDataset adapt_to_expert(const ImageDataset& ds, const ExpertModel& model) {
  return adapt_channels(pad_to(ds, kExpertInputSize, kExpertInputSize), model.in_channels);
}

namespace {

void require_matching(const ExpertModel& model, const ImageDataset& ds) {
  IOShape in = model.input_shape();
  require(ds.c == in.c && ds.h == in.h && ds.w == in.w, ErrorCode::ShapeMismatch,
          "dataset " + ds.name + " is " + std::to_string(ds.c) + "x" + std::to_string(ds.h) + "x" +
              std::to_string(ds.w) + " but expert expects " + in.to_string());
}

}  // namespace

std::vector<EpochStats> train_expert(ExpertModel& model, const ImageDataset& train_ds,
                                     const TrainConfig& config) {
  require_matching(model, train_ds);
  require(train_ds.class_count == model.class_count, ErrorCode::InvalidArgument,
          "dataset has " + std::to_string(train_ds.class_count) + " classes, expert expects " +
              std::to_string(model.class_count));
  // stats come from the training split unless the caller pinned them
  if (model.norm.mean.empty()) model.norm = compute_norm_stats(train_ds);
  model.config = config;
  model.net.init_weights(config.seed);
  return run_sgd_epochs(model.net, static_cast<int>(train_ds.size()), config,
                        [&](const std::vector<int>& idx, Tensor& batch, std::vector<int>& labels,
                            std::vector<float>& weights) {
                          fill_normalized_batch(train_ds, idx, model.norm, batch);
                          labels.resize(idx.size());
                          for (size_t i = 0; i < idx.size(); ++i)
                            labels[i] = train_ds.labels[idx[i]];
                          weights.clear();
                        });
}

double evaluate(const ExpertModel& model, const ImageDataset& test_ds, int threads) {
  require_matching(model, test_ds);
  require(test_ds.size() > 0, ErrorCode::InvalidArgument, "cannot evaluate on an empty dataset");
  if (threads <= 0) threads = default_thread_count();
  const int k = model.class_count;
  std::atomic<long> correct{0};
  parallel_chunks(static_cast<int64_t>(test_ds.size()), threads, [&](int64_t b, int64_t e) {
    constexpr int kBatch = 256;
    Tensor batch;
    std::vector<int> idx;
    long local = 0;
    for (int64_t start = b; start < e; start += kBatch) {
      const int64_t stop = std::min(e, start + kBatch);
      idx.resize(stop - start);
      for (int64_t i = start; i < stop; ++i) idx[i - start] = static_cast<int>(i);
      fill_normalized_batch(test_ds, idx, model.norm, batch);
      Tensor logits = model.net.forward_logits(batch);
      for (size_t r = 0; r < idx.size(); ++r) {
        const float* row = logits.row(static_cast<int>(r), k);
        int best = 0;
        for (int j = 1; j < k; ++j)
          if (row[j] > row[best]) best = j;
        if (best == test_ds.labels[idx[r]]) ++local;
      }
    }
    correct += local;
  });
  return static_cast<double>(correct.load()) / static_cast<double>(test_ds.size());
}

TraceFeatures infer_with_trace(const ExpertModel& model, const Tensor& normalized_batch) {
  require(model.final_fc_layer >= 0, ErrorCode::InvalidArgument,
          "expert has no designated final-FC layer");
  ActivationTrace trace = model.net.forward(normalized_batch);
  TraceFeatures f;
  f.final_fc = std::move(trace.outputs[model.final_fc_layer]);
  f.logits = std::move(trace.outputs.back());
  return f;
}

Tensor prepare_expert_batch(const ExpertModel& model, const ImageDataset& ds,
                            const std::vector<int>& indices) {
  require_matching(model, ds);
  Tensor batch;
  fill_normalized_batch(ds, indices, model.norm, batch);
  return batch;
}

namespace {

uint8_t saturate_u8(float v) {
  long q = std::lround(static_cast<double>(v) * 255.0);
  return static_cast<uint8_t>(std::min(255L, std::max(0L, q)));
}

}  // namespace

void prepare_cross_image(const ExpertModel& consumer, const float* pixels, int channels, int h,
                         int w, const NormStats& source_norm, float* out) {
  IOShape in = consumer.input_shape();
  require(h == in.h && w == in.w, ErrorCode::ShapeMismatch,
          "image " + std::to_string(h) + "x" + std::to_string(w) + " does not match expert input " +
              in.to_string());
  require(channels == 1 || channels == 3, ErrorCode::InvalidArgument,
          "image channel count must be 1 or 3");
  require(static_cast<int>(source_norm.mean.size()) == channels, ErrorCode::ShapeMismatch,
          "source stats do not match the image channel count");
  const size_t plane = static_cast<size_t>(h) * w;
  // identical float ops to fill_normalized_batch so the same-channel route
  // agrees with it bit for bit
  auto standardize = [&](int ch, float v) {
    return (v - source_norm.mean[ch]) * (1.0f / source_norm.stddev[ch]);
  };
  if (channels == in.c) {
    for (int ch = 0; ch < channels; ++ch)
      for (size_t j = 0; j < plane; ++j)
        out[ch * plane + j] = standardize(ch, pixels[ch * plane + j]);
  } else if (channels == 1) {  // requantize, replicate into 3 planes
    for (size_t j = 0; j < plane; ++j) {
      float v = saturate_u8(standardize(0, pixels[j])) * (1.0f / 255.0f);
      out[j] = v;
      out[plane + j] = v;
      out[2 * plane + j] = v;
    }
  } else {  // requantize per channel, then grayscale exactly like adapt_channels
    for (size_t j = 0; j < plane; ++j) {
      uint8_t y = luminance(saturate_u8(standardize(0, pixels[j])),
                            saturate_u8(standardize(1, pixels[plane + j])),
                            saturate_u8(standardize(2, pixels[2 * plane + j])));
      out[j] = y * (1.0f / 255.0f);
    }
  }
}

void prepare_cross_batch(const ExpertModel& consumer, const ImageDataset& ds,
                         const NormStats& source_norm, const std::vector<int>& indices,
                         Tensor& out) {
  IOShape in = consumer.input_shape();
  require(ds.h == in.h && ds.w == in.w, ErrorCode::ShapeMismatch,
          "dataset " + ds.name + " resolution does not match expert input " + in.to_string());
  out.shape = {static_cast<int>(indices.size()), in.c, in.h, in.w};
  out.data.resize(indices.size() * static_cast<size_t>(in.c) * in.h * in.w);
  std::vector<float> unit(ds.image_bytes());
  for (size_t i = 0; i < indices.size(); ++i) {
    const uint8_t* src = ds.image(indices[i]);
    for (size_t j = 0; j < unit.size(); ++j) unit[j] = u8_to_unit(src[j]);
    prepare_cross_image(consumer, unit.data(), ds.c, ds.h, ds.w, source_norm,
                        out.data.data() + i * static_cast<size_t>(in.c) * in.h * in.w);
  }
}

}  // namespace moe
