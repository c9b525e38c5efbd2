#include "gating/upan.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "core/error.hpp"
#include "core/parallel.hpp"
#include "core/rng.hpp"
#include "experts/checkpoint.hpp"

namespace moe {

AttributionDataset build_upan_dataset(const std::vector<const ExpertModel*>& experts,
                                      const std::vector<const ImageDataset*>& datasets,
                                      FeatureKind kind, int threads) {
  require(!experts.empty() && experts.size() == datasets.size(), ErrorCode::InvalidArgument,
          "one own-training dataset per expert required");
  const int width0 = feature_width(kind, experts[0]->class_count);
  for (size_t e = 1; e < experts.size(); ++e) {
    const int w = feature_width(kind, experts[e]->class_count);
    require(w == width0, ErrorCode::ShapeMismatch,
            "feature kind '" + to_string(kind) + "' yields width " + std::to_string(width0) +
                " for expert 0 but " + std::to_string(w) + " for expert " + std::to_string(e) +
                "; architecture-dependent features cannot be merged across these experts");
  }
  AttributionDataset merged;
  std::vector<ImageDataset> padded;
  padded.reserve(datasets.size());
  for (size_t d = 0; d < datasets.size(); ++d) {
    require(datasets[d] != nullptr, ErrorCode::InvalidArgument, "null dataset");
    padded.push_back(pad_to(*datasets[d], kExpertInputSize, kExpertInputSize));
  }
  for (size_t e = 0; e < experts.size(); ++e) {
    for (size_t d = 0; d < padded.size(); ++d) {
      append_attribution_rows(merged, *experts[e], static_cast<int>(e), padded[d],
                              experts[d]->norm, e == d, kind, threads);
    }
  }
  merged.validate();
  return merged;
}

PANModel train_upan(const AttributionDataset& merged, FeatureKind kind,
                    const TrainConfig& config) {
  return train_pan(merged, kind, config, /*owner_expert=*/-1);
}

namespace {

std::vector<bool> upan_flags(const PANModel& upan, const MixtureTrace& trace, size_t sample) {
  std::vector<bool> flags(trace.logits.size());
  std::vector<float> feat;
  for (size_t e = 0; e < trace.logits.size(); ++e) {
    const int k = trace.logits[e].dim(1);
    const int width = feature_width(upan.kind, k);
    require(width == upan.input_width, ErrorCode::ShapeMismatch,
            "UPAN expects width " + std::to_string(upan.input_width) + " but expert " +
                std::to_string(e) + " yields " + std::to_string(width));
    feat.resize(width);
    extract_features(upan.kind, trace.logits[e].row(static_cast<int>(sample), k), k,
                     trace.final_fc[e].row(static_cast<int>(sample), kFinalFcWidth), feat.data());
    flags[e] = pan_attribute(upan, feat.data()).belongs;
  }
  return flags;
}

}  // namespace

GatingDecision sc2_decide(const PANModel& upan, const MixtureTrace& trace, size_t sample) {
  return sc_decide_from_flags(upan_flags(upan, trace, sample), trace.concat_row(sample));
}

ScAccuracy evaluate_sc2_detailed(const PANModel& upan, const MixtureTrace& trace,
                                 const MixedTestSet& mixed) {
  require(trace.sample_count == mixed.size(), ErrorCode::InvalidArgument,
          "trace/test set size mismatch");
  ScAccuracy result;
  long correct = 0;
  for (size_t i = 0; i < mixed.size(); ++i) {
    GatingDecision d = sc2_decide(upan, trace, i);
    if (d.path == GatePath::ExclusivePan)
      ++result.exclusive;
    else
      ++result.fallback;
    if (d.global_class == mixed.samples[i].global_label) ++correct;
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(mixed.size());
  return result;
}

double evaluate_sc2(const PANModel& upan, const MixtureTrace& trace, const MixedTestSet& mixed) {
  return evaluate_sc2_detailed(upan, trace, mixed).accuracy;
}

CrossEvalResult cross_evaluate_upan(const PANModel& upan, const AttributionDataset& foreign_test,
                                    const MixtureTrace& foreign_trace,
                                    const MixedTestSet& foreign_mixed) {
  CrossEvalResult r;
  r.attribution_accuracy = evaluate_pan(upan, foreign_test);
  r.sc2_accuracy = evaluate_sc2(upan, foreign_trace, foreign_mixed);
  return r;
}

namespace {

// FPAN input pipeline: [0,1] native-channel image -> 3-channel replicate ->
// standardize with the router's stats.
void prepare_fpan_image(const FpanModel& fpan, const float* pixels, int channels, int h, int w,
                        float* out) {
  const size_t plane = static_cast<size_t>(h) * w;
  for (int ch = 0; ch < 3; ++ch) {
    const float* src = channels == 3 ? pixels + ch * plane : pixels;
    const float mean = fpan.norm.mean[ch];
    const float inv = 1.0f / fpan.norm.stddev[ch];
    for (size_t j = 0; j < plane; ++j) out[ch * plane + j] = (src[j] - mean) * inv;
  }
}

}  // namespace

FpanResult train_fpan(const PANModel& upan, const std::vector<const ExpertModel*>& experts,
                      const MixedTestSet& pool, const TrainConfig& config, int threads) {
  require(experts.size() >= 2, ErrorCode::InvalidArgument,
          "routing needs at least 2 experts, got " + std::to_string(experts.size()));
  require(pool.size() > 0, ErrorCode::InvalidArgument, "empty training pool");

  MixtureTrace trace = trace_mixture(experts, pool, threads);
  std::vector<int> teacher(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) teacher[i] = sc2_decide(upan, trace, i).expert_id;

  // pool images as a 3-channel uint8 dataset labeled by the teacher
  ImageDataset images;
  images.name = "fpan-pool";
  images.class_count = static_cast<int>(experts.size());
  images.h = pool.h;
  images.w = pool.w;
  images.c = 3;
  images.pixels.resize(pool.size() * images.image_bytes());
  images.labels.resize(pool.size());
  const size_t plane = static_cast<size_t>(pool.h) * pool.w;
  for (size_t i = 0; i < pool.size(); ++i) {
    const MixedSample& s = pool.samples[i];
    uint8_t* dst = images.image(i);
    for (int ch = 0; ch < 3; ++ch) {
      const uint8_t* src = s.pixels.data() + (s.channels == 3 ? ch * plane : 0);
      std::copy(src, src + plane, dst + ch * plane);
    }
    images.labels[i] = static_cast<uint8_t>(teacher[i]);
  }

  ExpertModel router = build_lenet5(3, static_cast<int>(experts.size()));
  train_expert(router, images, config);
  FpanResult result{
      .model = FpanModel{std::move(router.net), static_cast<int>(experts.size()), router.norm,
                         config},
      .teacher = std::move(teacher),
      .teacher_agreement = 0.0,
      .routing_accuracy = 0.0,
  };

  long agree = 0, routed = 0;
  for (size_t i = 0; i < pool.size(); ++i) {
    const int choice = fpan_route(result.model, pool.samples[i], pool.h, pool.w);
    if (choice == result.teacher[i]) ++agree;
    if (choice == pool.samples[i].component) ++routed;
  }
  result.teacher_agreement = static_cast<double>(agree) / static_cast<double>(pool.size());
  result.routing_accuracy = static_cast<double>(routed) / static_cast<double>(pool.size());
  return result;
}

double evaluate_fpan_routing(const FpanModel& fpan, const MixedTestSet& mixed) {
  require(mixed.size() > 0, ErrorCode::InvalidArgument, "empty mixed set");
  long correct = 0;
  for (const MixedSample& s : mixed.samples) {
    if (fpan_route(fpan, s, mixed.h, mixed.w) == s.component) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(mixed.size());
}

void save_fpan(const FpanModel& fpan, const std::string& path) {
  nlohmann::json header{
      {"kind", "fpan"},
      {"expert_count", fpan.expert_count},
      {"norm", norm_stats_to_json(fpan.norm)},
      {"config", train_config_to_json(fpan.config)},
  };
  write_checkpoint_file(path, header, fpan.net.snapshot_params());
}

FpanModel load_fpan(const std::string& path) {
  CheckpointFile file = read_checkpoint_file(path);
  const auto& h = file.header;
  require(h.value("kind", "") == "fpan", ErrorCode::Format,
          path + ": checkpoint kind '" + h.value("kind", "") + "', expected 'fpan'");
  ExpertModel shape = build_lenet5(3, h.at("expert_count").get<int>());
  FpanModel fpan{std::move(shape.net), h.at("expert_count").get<int>(),
                 norm_stats_from_json(h.at("norm")), train_config_from_json(h.at("config"))};
  std::vector<Tensor> params = fpan.net.snapshot_params();
  require(params.size() == file.blobs.size(), ErrorCode::Format, path + ": blob count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    require(params[i].data.size() == file.blobs[i].size(), ErrorCode::Format,
            path + ": blob " + std::to_string(i) + " size mismatch");
    params[i].data = std::move(file.blobs[i]);
  }
  fpan.net.load_params(params);
  return fpan;
}

int fpan_route(const FpanModel& fpan, const MixedSample& sample, int h, int w) {
  std::vector<float> unit(sample.pixels.size());
  for (size_t j = 0; j < unit.size(); ++j) unit[j] = u8_to_unit(sample.pixels[j]);
  Tensor batch = Tensor::zeros({1, 3, h, w});
  prepare_fpan_image(fpan, unit.data(), sample.channels, h, w, batch.data.data());
  Tensor logits = fpan.net.forward_logits(batch);
  int best = 0;
  for (int j = 1; j < fpan.expert_count; ++j)
    if (logits.data[j] > logits.data[best]) best = j;
  return best;
}

}  // namespace moe
