#include "gating/pan.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "core/error.hpp"
#include "core/loss.hpp"
#include "core/train.hpp"
#include "experts/checkpoint.hpp"

namespace moe {

PANModel make_pan(FeatureKind kind, int input_width, int owner_expert) {
  require(input_width > 0, ErrorCode::InvalidArgument, "feature width must be positive");
  PANModel pan{
      .net = Network(IOShape::flat(input_width),
                     {LayerSpec::dense(64), LayerSpec::relu(), LayerSpec::dense(32),
                      LayerSpec::relu(), LayerSpec::dense(2)}),
      .kind = kind,
      .input_width = input_width,
      .owner_expert = owner_expert,
  };
  return pan;
}

namespace {

std::vector<float> balance_weights(const std::vector<uint8_t>& labels) {
  size_t pos = 0;
  for (uint8_t l : labels) pos += l;
  const size_t neg = labels.size() - pos;
  require(pos > 0 && neg > 0, ErrorCode::InvalidArgument,
          "attribution dataset needs both true and false rows to train");
  const float wpos = static_cast<float>(labels.size()) / (2.0f * pos);
  const float wneg = static_cast<float>(labels.size()) / (2.0f * neg);
  std::vector<float> w(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) w[i] = labels[i] ? wpos : wneg;
  return w;
}

// z-scores a row in place when stats are present
inline void apply_feature_norm(const NormStats& norm, const float* in, float* out, int width) {
  if (norm.mean.empty()) {
    std::copy(in, in + width, out);
    return;
  }
  for (int j = 0; j < width; ++j) out[j] = (in[j] - norm.mean[j]) / norm.stddev[j];
}

}  // namespace

PANModel train_pan(const AttributionDataset& ds, FeatureKind kind, const TrainConfig& config,
                   int owner_expert) {
  ds.validate();
  PANModel pan = make_pan(kind, ds.width, owner_expert);
  pan.config = config;
  pan.net.init_weights(config.seed);

  if (owner_expert < 0) {
    // universal PAN: standardize features so scales from unrelated experts
    // are commensurable; stats come from the training rows only
    pan.feature_norm.mean.assign(ds.width, 0.0f);
    pan.feature_norm.stddev.assign(ds.width, 1.0f);
    for (int j = 0; j < ds.width; ++j) {
      double sum = 0.0, sum2 = 0.0;
      for (size_t i = 0; i < ds.rows(); ++i) {
        double v = ds.row(i)[j];
        sum += v;
        sum2 += v * v;
      }
      double mean = sum / ds.rows();
      double var = std::max(sum2 / ds.rows() - mean * mean, 0.0);
      pan.feature_norm.mean[j] = static_cast<float>(mean);
      pan.feature_norm.stddev[j] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
    }
  }

  Tensor x = Tensor::zeros({static_cast<int>(ds.rows()), ds.width});
  for (size_t i = 0; i < ds.rows(); ++i)
    apply_feature_norm(pan.feature_norm, ds.row(i), x.row(static_cast<int>(i), ds.width),
                       ds.width);
  std::vector<int> labels(ds.labels.begin(), ds.labels.end());
  fit_tensor(pan.net, x, labels, balance_weights(ds.labels), config);
  return pan;
}

Attribution pan_attribute(const PANModel& pan, const float* features) {
  Tensor row = Tensor::zeros({1, pan.input_width});
  apply_feature_norm(pan.feature_norm, features, row.data.data(), pan.input_width);
  Tensor logits = pan.net.forward_logits(row);
  Attribution a;
  a.belongs = logits.data[1] > logits.data[0];  // equal logits -> false
  Tensor p = softmax_rows(logits);
  a.confidence = p.data[1];
  return a;
}

double evaluate_pan(const PANModel& pan, const AttributionDataset& test) {
  test.validate();
  require(test.width == pan.input_width, ErrorCode::ShapeMismatch,
          "attribution rows are " + std::to_string(test.width) + " wide, PAN expects " +
              std::to_string(pan.input_width));
  constexpr int kBatch = 512;
  Tensor batch;
  long correct = 0;
  for (size_t start = 0; start < test.rows(); start += kBatch) {
    const int bn = static_cast<int>(std::min<size_t>(kBatch, test.rows() - start));
    batch.shape = {bn, test.width};
    batch.data.resize(static_cast<size_t>(bn) * test.width);
    for (int i = 0; i < bn; ++i)
      apply_feature_norm(pan.feature_norm, test.row(start + i), batch.row(i, test.width),
                         test.width);
    Tensor logits = pan.net.forward_logits(batch);
    for (int i = 0; i < bn; ++i) {
      const float* row = logits.row(i, 2);
      bool belongs = row[1] > row[0];
      if (belongs == (test.labels[start + i] != 0)) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.rows());
}

GatingDecision sc_decide_from_flags(const std::vector<bool>& flags, const ConcatenatedLogits& c) {
  require(static_cast<int>(flags.size()) == c.segments(), ErrorCode::InvalidArgument,
          "one attribution flag per expert required");
  int true_count = 0;
  int chosen = -1;
  for (size_t e = 0; e < flags.size(); ++e) {
    if (flags[e]) {
      ++true_count;
      chosen = static_cast<int>(e);
    }
  }
  if (true_count != 1) return with_path(decide_argmax(c), GatePath::Fallback);
  int best = c.seg_begin(chosen);
  for (int i = best + 1; i < c.seg_end(chosen); ++i) {
    if (c.flat[i] > c.flat[best]) best = i;
  }
  GatingDecision d;
  d.expert_id = chosen;
  d.local_class = best - c.seg_begin(chosen);
  d.global_class = best;
  d.path = GatePath::ExclusivePan;
  return d;
}

GatingDecision sc1_decide(const std::vector<const PANModel*>& pans, const MixtureTrace& trace,
                          size_t sample) {
  require(pans.size() == trace.logits.size(), ErrorCode::InvalidArgument,
          "PAN count does not match expert count");
  std::vector<bool> flags(pans.size());
  std::vector<float> feat;
  for (size_t e = 0; e < pans.size(); ++e) {
    const PANModel& pan = *pans[e];
    const int k = trace.logits[e].dim(1);
    feat.resize(feature_width(pan.kind, k));
    extract_features(pan.kind, trace.logits[e].row(static_cast<int>(sample), k), k,
                     trace.final_fc[e].row(static_cast<int>(sample), kFinalFcWidth), feat.data());
    require(static_cast<int>(feat.size()) == pan.input_width, ErrorCode::ShapeMismatch,
            "PAN " + std::to_string(e) + " feature width mismatch");
    flags[e] = pan_attribute(pan, feat.data()).belongs;
  }
  return sc_decide_from_flags(flags, trace.concat_row(sample));
}

ScAccuracy evaluate_sc1_detailed(const std::vector<const PANModel*>& pans,
                                 const MixtureTrace& trace, const MixedTestSet& mixed) {
  require(trace.sample_count == mixed.size(), ErrorCode::InvalidArgument,
          "trace/test set size mismatch");
  ScAccuracy result;
  long correct = 0;
  for (size_t i = 0; i < mixed.size(); ++i) {
    GatingDecision d = sc1_decide(pans, trace, i);
    if (d.path == GatePath::ExclusivePan)
      ++result.exclusive;
    else
      ++result.fallback;
    if (d.global_class == mixed.samples[i].global_label) ++correct;
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(mixed.size());
  return result;
}

double evaluate_sc1(const std::vector<const PANModel*>& pans, const MixtureTrace& trace,
                    const MixedTestSet& mixed) {
  return evaluate_sc1_detailed(pans, trace, mixed).accuracy;
}

void save_pan(const PANModel& pan, const std::string& path) {
  nlohmann::json header{
      {"kind", "pan"},
      {"feature_kind", to_string(pan.kind)},
      {"input_width", pan.input_width},
      {"owner_expert", pan.owner_expert},
      {"feature_norm", norm_stats_to_json(pan.feature_norm)},
      {"config", train_config_to_json(pan.config)},
  };
  write_checkpoint_file(path, header, pan.net.snapshot_params());
}

PANModel load_pan(const std::string& path) {
  CheckpointFile file = read_checkpoint_file(path);
  const auto& h = file.header;
  require(h.value("kind", "") == "pan", ErrorCode::Format,
          path + ": checkpoint kind '" + h.value("kind", "") + "', expected 'pan'");
  PANModel pan = make_pan(feature_kind_from_string(h.at("feature_kind").get<std::string>()),
                          h.at("input_width").get<int>(), h.at("owner_expert").get<int>());
  pan.feature_norm = norm_stats_from_json(h.at("feature_norm"));
  pan.config = train_config_from_json(h.at("config"));
  std::vector<Tensor> params = pan.net.snapshot_params();
  require(params.size() == file.blobs.size(), ErrorCode::Format, path + ": blob count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    require(params[i].data.size() == file.blobs[i].size(), ErrorCode::Format,
            path + ": blob " + std::to_string(i) + " size mismatch");
    params[i].data = std::move(file.blobs[i]);
  }
  pan.net.load_params(params);
  return pan;
}

}  // namespace moe
