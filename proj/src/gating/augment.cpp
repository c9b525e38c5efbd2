#include "gating/augment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <sstream>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace moe {

namespace {

using Kind = AugmentationSpec::Kind;

const std::map<std::string, Kind>& kind_names() {
  static const std::map<std::string, Kind> names{
      {"sharpen", Kind::Sharpen}, {"gauss", Kind::GaussianNoise},
      {"poisson", Kind::PoissonNoise}, {"hflip", Kind::HFlip},
      {"vflip", Kind::VFlip},     {"crop", Kind::RandomCrop},
  };
  return names;
}

float default_param(Kind kind) {
  switch (kind) {
    case Kind::Sharpen: return 0.5f;
    case Kind::GaussianNoise: return 0.1f;
    case Kind::PoissonNoise: return 0.1f;
    case Kind::RandomCrop: return 4.0f;
    default: return 0.0f;
  }
}

void clamp01(std::vector<float>& image) {
  for (float& v : image) v = std::min(1.0f, std::max(0.0f, v));
}

// 3x3 box blur with clamp-to-edge borders, one channel plane.
void box_blur3(const float* in, float* out, int h, int w) {
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = std::min(h - 1, std::max(0, y + dy));
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = std::min(w - 1, std::max(0, x + dx));
          acc += in[yy * w + xx];
        }
      }
      out[y * w + x] = static_cast<float>(acc / 9.0);
    }
  }
}

}  // namespace

AugmentationSpec AugmentationSpec::parse(const std::string& text) {
  AugmentationSpec spec;
  std::string name = text;
  std::string args;
  if (auto pos = text.find(':'); pos != std::string::npos) {
    name = text.substr(0, pos);
    args = text.substr(pos + 1);
  }
  auto it = kind_names().find(name);
  require(it != kind_names().end(), ErrorCode::InvalidArgument,
          "unknown augmentation '" + name + "' (sharpen|gauss|poisson|hflip|vflip|crop)");
  spec.kind = it->second;
  std::stringstream ss(args);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      spec.params.push_back(std::stof(tok));
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "bad augmentation parameter '" + tok + "' in " + text);
    }
  }
  spec.validate();
  return spec;
}

std::string AugmentationSpec::to_string() const {
  std::string name;
  for (const auto& [n, k] : kind_names()) {
    if (k == kind) name = n;
  }
  if (params.empty()) return name;
  std::ostringstream os;
  os << name << ":";
  for (size_t i = 0; i < params.size(); ++i) os << (i ? "," : "") << params[i];
  return os.str();
}

void AugmentationSpec::validate() const {
  for (float p : params) {
    switch (kind) {
      case Kind::Sharpen:
        require(p >= 0.0f, ErrorCode::InvalidArgument, "sharpen alpha must be >= 0");
        break;
      case Kind::GaussianNoise:
        require(p >= 0.0f, ErrorCode::InvalidArgument, "gaussian sigma must be >= 0");
        break;
      case Kind::PoissonNoise:
        require(p >= 0.0f, ErrorCode::InvalidArgument, "poisson sigma must be >= 0");
        break;
      case Kind::RandomCrop:
        require(p >= 0.0f && p == std::floor(p), ErrorCode::InvalidArgument,
                "crop pad must be a nonnegative integer");
        break;
      case Kind::HFlip:
      case Kind::VFlip:
        fail(ErrorCode::InvalidArgument, "flips take no parameters");
    }
  }
}

std::vector<AugPass> expand_passes(const std::vector<AugmentationSpec>& specs) {
  std::vector<AugPass> passes;
  for (const AugmentationSpec& s : specs) {
    s.validate();
    if (s.params.empty()) {
      passes.push_back({s.kind, default_param(s.kind)});
    } else {
      for (float p : s.params) passes.push_back({s.kind, p});
    }
  }
  return passes;
}

void apply_augmentation(std::vector<float>& image, int c, int h, int w, const AugPass& pass,
                        Rng& rng) {
  const size_t plane = static_cast<size_t>(h) * w;
  require(image.size() == plane * c, ErrorCode::ShapeMismatch, "augmentation buffer mismatch");
  switch (pass.kind) {
    case Kind::Sharpen: {
      std::vector<float> blur(plane);
      for (int ch = 0; ch < c; ++ch) {
        float* p = image.data() + ch * plane;
        box_blur3(p, blur.data(), h, w);
        for (size_t j = 0; j < plane; ++j) p[j] = p[j] + pass.param * (p[j] - blur[j]);
      }
      break;
    }
    case Kind::GaussianNoise: {
      for (float& v : image) v += static_cast<float>(pass.param * rng.normal());
      break;
    }
    case Kind::PoissonNoise: {
      if (pass.param <= 0.0f) break;  // zero strength, identity
      const double scale = 1.0 / (static_cast<double>(pass.param) * pass.param);
      for (float& v : image)
        v = static_cast<float>(static_cast<double>(rng.poisson(std::max(0.0f, v) * scale)) / scale);
      break;
    }
    case Kind::HFlip: {
      for (int ch = 0; ch < c; ++ch) {
        float* p = image.data() + ch * plane;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w / 2; ++x) std::swap(p[y * w + x], p[y * w + (w - 1 - x)]);
      }
      break;
    }
    case Kind::VFlip: {
      for (int ch = 0; ch < c; ++ch) {
        float* p = image.data() + ch * plane;
        for (int y = 0; y < h / 2; ++y)
          for (int x = 0; x < w; ++x) std::swap(p[y * w + x], p[(h - 1 - y) * w + x]);
      }
      break;
    }
    case Kind::RandomCrop: {
      const int pad = static_cast<int>(pass.param);
      if (pad == 0) break;
      const int oy = static_cast<int>(rng.below(2 * pad + 1));
      const int ox = static_cast<int>(rng.below(2 * pad + 1));
      std::vector<float> out(image.size(), 0.0f);
      // zero-pad by `pad`, then crop h x w at offset (oy, ox)
      for (int ch = 0; ch < c; ++ch) {
        const float* src = image.data() + ch * plane;
        float* dst = out.data() + ch * plane;
        for (int y = 0; y < h; ++y) {
          const int sy = y + oy - pad;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + ox - pad;
            if (sx < 0 || sx >= w) continue;
            dst[y * w + x] = src[sy * w + sx];
          }
        }
      }
      image = std::move(out);
      break;
    }
  }
  clamp01(image);
}

Aggregation aggregation_from_string(const std::string& name) {
  if (name == "mean") return Aggregation::Mean;
  if (name == "vote") return Aggregation::Vote;
  fail(ErrorCode::InvalidArgument, "unknown aggregation '" + name + "' (mean|vote)");
}

std::string to_string(Aggregation agg) { return agg == Aggregation::Mean ? "mean" : "vote"; }

namespace {

// Concatenations for the original pass plus every augmented pass.
std::vector<ConcatenatedLogits> collect_passes(const std::vector<const ExpertModel*>& experts,
                                               const MixedSample& sample, int h, int w,
                                               const std::vector<AugPass>& passes, Rng& rng) {
  std::vector<float> unit(sample.pixels.size());
  for (size_t j = 0; j < sample.pixels.size(); ++j) unit[j] = u8_to_unit(sample.pixels[j]);
  const NormStats& source_norm = experts[sample.component]->norm;

  std::vector<ConcatenatedLogits> out;
  out.reserve(passes.size() + 1);
  std::vector<float> work;
  std::vector<std::vector<float>> per_expert(experts.size());
  auto run = [&](const std::vector<float>& img) {
    for (size_t e = 0; e < experts.size(); ++e) {
      const ExpertModel& expert = *experts[e];
      IOShape in = expert.input_shape();
      Tensor batch = Tensor::zeros({1, in.c, in.h, in.w});
      prepare_cross_image(expert, img.data(), sample.channels, h, w, source_norm,
                          batch.data.data());
      Tensor logits = expert.net.forward_logits(batch);
      per_expert[e].assign(logits.data.begin(), logits.data.end());
    }
    out.push_back(concat(per_expert));
  };
  run(unit);
  for (const AugPass& pass : passes) {
    work = unit;
    apply_augmentation(work, sample.channels, h, w, pass, rng);
    run(work);
  }
  return out;
}

}  // namespace

GatingDecision aggregate_passes(const std::vector<ConcatenatedLogits>& concats, Aggregation agg) {
  require(!concats.empty(), ErrorCode::InvalidArgument, "no passes to aggregate");
  if (agg == Aggregation::Mean) {
    // double accumulation keeps means of identical passes bit-exact
    std::vector<double> acc(concats[0].flat.size(), 0.0);
    for (const auto& c : concats)
      for (size_t i = 0; i < acc.size(); ++i) acc[i] += c.flat[i];
    ConcatenatedLogits mean;
    mean.offsets = concats[0].offsets;
    mean.flat.resize(acc.size());
    for (size_t i = 0; i < acc.size(); ++i)
      mean.flat[i] = static_cast<float>(acc[i] / static_cast<double>(concats.size()));
    return decide_argmax(mean);
  }
  std::vector<GatingDecision> votes;
  votes.reserve(concats.size());
  for (const auto& c : concats) votes.push_back(decide_argmax(c));
  std::vector<int> counts(concats[0].flat.size(), 0);
  for (const auto& v : votes) ++counts[v.global_class];
  int best = votes[0].global_class;  // ties fall back to the un-augmented pass
  for (size_t g = 0; g < counts.size(); ++g) {
    if (counts[g] > counts[best]) best = static_cast<int>(g);
  }
  for (const auto& v : votes) {
    if (v.global_class == best) return v;
  }
  return votes[0];
}

GatingDecision multi_pass_decide(const std::vector<const ExpertModel*>& experts,
                                 const MixedSample& sample, int h, int w,
                                 const std::vector<AugPass>& passes, Aggregation agg, Rng& rng) {
  require(!experts.empty(), ErrorCode::InvalidArgument, "no experts");
  auto concats = collect_passes(experts, sample, h, w, passes, rng);
  return aggregate_passes(concats, agg);
}

AugmentedAccuracy evaluate_augmented(const std::vector<const ExpertModel*>& experts,
                                     const MixedTestSet& mixed,
                                     const std::vector<AugmentationSpec>& specs, uint64_t seed,
                                     int threads) {
  require(!experts.empty(), ErrorCode::InvalidArgument, "no experts");
  require(mixed.size() > 0, ErrorCode::InvalidArgument, "empty mixed test set");
  const std::vector<AugPass> passes = expand_passes(specs);
  if (threads <= 0) threads = default_thread_count();
  std::atomic<long> correct_mean{0}, correct_vote{0};
  parallel_chunks(static_cast<int64_t>(mixed.size()), threads, [&](int64_t b, int64_t e) {
    long mean_hits = 0, vote_hits = 0;
    for (int64_t i = b; i < e; ++i) {
      const MixedSample& s = mixed.samples[i];
      Rng rng(mix_seed(seed, static_cast<uint64_t>(i)));
      auto concats = collect_passes(experts, s, mixed.h, mixed.w, passes, rng);
      if (aggregate_passes(concats, Aggregation::Mean).global_class == s.global_label)
        ++mean_hits;
      if (aggregate_passes(concats, Aggregation::Vote).global_class == s.global_label)
        ++vote_hits;
    }
    correct_mean += mean_hits;
    correct_vote += vote_hits;
  });
  AugmentedAccuracy acc;
  acc.mean = static_cast<double>(correct_mean.load()) / static_cast<double>(mixed.size());
  acc.vote = static_cast<double>(correct_vote.load()) / static_cast<double>(mixed.size());
  return acc;
}

}  // namespace moe
