#include "gating/features.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace moe {

FeatureKind feature_kind_from_string(const std::string& name) {
  if (name == "logits") return FeatureKind::OutputLogits;
  if (name == "finalfc") return FeatureKind::FinalFC;
  if (name == "stats") return FeatureKind::OutputStats;
  fail(ErrorCode::InvalidArgument, "unknown feature kind '" + name + "' (logits|finalfc|stats)");
}

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::OutputLogits: return "logits";
    case FeatureKind::FinalFC: return "finalfc";
    case FeatureKind::OutputStats: return "stats";
  }
  return "?";
}

int feature_width(FeatureKind kind, int class_count) {
  switch (kind) {
    case FeatureKind::OutputLogits: return class_count;
    case FeatureKind::FinalFC: return kFinalFcWidth;
    case FeatureKind::OutputStats: return 3;
  }
  return 0;
}

void extract_features(FeatureKind kind, const float* logits, int class_count,
                      const float* final_fc, float* out) {
  switch (kind) {
    case FeatureKind::OutputLogits:
      std::memcpy(out, logits, sizeof(float) * class_count);
      break;
    case FeatureKind::FinalFC:
      std::memcpy(out, final_fc, sizeof(float) * kFinalFcWidth);
      break;
    case FeatureKind::OutputStats: {
      double mean = 0.0;
      float mx = logits[0];
      for (int j = 0; j < class_count; ++j) {
        mean += logits[j];
        mx = std::max(mx, logits[j]);
      }
      mean /= class_count;
      double var = 0.0;
      for (int j = 0; j < class_count; ++j) {
        double d = logits[j] - mean;
        var += d * d;
      }
      out[0] = static_cast<float>(mean);
      out[1] = mx;
      out[2] = static_cast<float>(std::sqrt(var / class_count));
      break;
    }
  }
}

void AttributionDataset::validate() const {
  require(width > 0, ErrorCode::InvalidArgument, "attribution feature width must be positive");
  require(features.size() == rows() * static_cast<size_t>(width), ErrorCode::ShapeMismatch,
          "attribution feature buffer does not match row count");
  uint64_t total = 0;
  for (const Group& g : groups) total += g.count;
  require(total == rows(), ErrorCode::ShapeMismatch,
          "attribution provenance groups do not cover the rows");
}

void append_attribution_rows(AttributionDataset& out, const ExpertModel& expert, int expert_id,
                             const ImageDataset& ds, const NormStats& source_norm, bool positive,
                             FeatureKind kind, int threads) {
  const int width = feature_width(kind, expert.class_count);
  if (out.rows() == 0 && out.width == 0) out.width = width;
  require(out.width == width, ErrorCode::ShapeMismatch,
          "feature width " + std::to_string(width) + " from expert " + std::to_string(expert_id) +
              " does not match dataset width " + std::to_string(out.width) +
              "; mixed-width attribution sets are unsupported");
  require(ds.size() > 0, ErrorCode::InvalidArgument, "empty dataset in attribution build");
  if (threads <= 0) threads = default_thread_count();

  const size_t base = out.rows();
  out.features.resize((base + ds.size()) * width);
  out.labels.resize(base + ds.size(), positive ? 1 : 0);
  parallel_chunks(static_cast<int64_t>(ds.size()), threads, [&](int64_t b, int64_t e) {
    constexpr int kBatch = 256;
    std::vector<int> idx;
    for (int64_t start = b; start < e; start += kBatch) {
      const int bn = static_cast<int>(std::min<int64_t>(kBatch, e - start));
      idx.resize(bn);
      for (int i = 0; i < bn; ++i) idx[i] = static_cast<int>(start + i);
      Tensor batch;
      prepare_cross_batch(expert, ds, source_norm, idx, batch);
      TraceFeatures f = infer_with_trace(expert, batch);
      for (int i = 0; i < bn; ++i) {
        extract_features(kind, f.logits.row(i, expert.class_count),
                         expert.class_count, f.final_fc.row(i, kFinalFcWidth),
                         out.features.data() + (base + start + i) * width);
      }
    }
  });
  out.groups.push_back({ds.name, expert_id, ds.size(), static_cast<uint8_t>(positive ? 1 : 0)});
}

AttributionDataset build_attribution_dataset(const ExpertModel& expert,
                                             const ImageDataset& positive,
                                             const std::vector<const ImageDataset*>& negatives,
                                             FeatureKind kind, int threads) {
  AttributionDataset out;
  append_attribution_rows(out, expert, 0, positive, expert.norm, true, kind, threads);
  for (const ImageDataset* neg : negatives) {
    require(neg != nullptr, ErrorCode::InvalidArgument, "null negative dataset");
    append_attribution_rows(out, expert, 0, *neg, compute_norm_stats(*neg), false, kind, threads);
  }
  out.validate();
  return out;
}

namespace {
constexpr char kAttribMagic[4] = {'M', 'O', 'E', 'A'};
constexpr uint32_t kAttribVersion = 1;
}  // namespace

void save_attribution(const AttributionDataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(os.is_open(), ErrorCode::Io, "cannot write " + path);
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : ds.groups) {
    groups.push_back({{"dataset_tag", g.dataset_tag},
                      {"expert_id", g.expert_id},
                      {"count", g.count},
                      {"label", g.label}});
  }
  nlohmann::json header{{"width", ds.width}, {"rows", ds.rows()}, {"groups", groups}};
  const std::string h = header.dump();
  os.write(kAttribMagic, 4);
  uint32_t v = kAttribVersion;
  os.write(reinterpret_cast<const char*>(&v), 4);
  uint32_t hlen = static_cast<uint32_t>(h.size());
  os.write(reinterpret_cast<const char*>(&hlen), 4);
  os.write(h.data(), hlen);
  os.write(reinterpret_cast<const char*>(ds.features.data()),
           static_cast<std::streamsize>(ds.features.size() * sizeof(float)));
  os.write(reinterpret_cast<const char*>(ds.labels.data()),
           static_cast<std::streamsize>(ds.labels.size()));
  require(static_cast<bool>(os), ErrorCode::Io, "short write to " + path);
}

AttributionDataset load_attribution(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.is_open(), ErrorCode::Io, "cannot open " + path);
  char magic[4];
  require(static_cast<bool>(is.read(magic, 4)) && std::memcmp(magic, kAttribMagic, 4) == 0,
          ErrorCode::Format, path + ": not an attribution dataset (bad magic)");
  uint32_t version = 0, hlen = 0;
  require(static_cast<bool>(is.read(reinterpret_cast<char*>(&version), 4)), ErrorCode::Format,
          path + ": truncated");
  require(version == kAttribVersion, ErrorCode::Format,
          path + ": attribution version " + std::to_string(version) + ", this build reads " +
              std::to_string(kAttribVersion));
  require(static_cast<bool>(is.read(reinterpret_cast<char*>(&hlen), 4)), ErrorCode::Format,
          path + ": truncated");
  std::string h(hlen, '\0');
  require(static_cast<bool>(is.read(h.data(), hlen)), ErrorCode::Format, path + ": truncated");
  nlohmann::json header = nlohmann::json::parse(h, nullptr, false);
  require(!header.is_discarded(), ErrorCode::Format, path + ": corrupt header");

  AttributionDataset ds;
  ds.width = header.at("width").get<int>();
  uint64_t rows = header.at("rows").get<uint64_t>();
  for (const auto& g : header.at("groups")) {
    ds.groups.push_back({g.at("dataset_tag").get<std::string>(), g.at("expert_id").get<int>(),
                         g.at("count").get<uint64_t>(), g.at("label").get<uint8_t>()});
  }
  ds.features.resize(rows * ds.width);
  ds.labels.resize(rows);
  require(static_cast<bool>(is.read(reinterpret_cast<char*>(ds.features.data()),
                                    static_cast<std::streamsize>(ds.features.size() *
                                                                 sizeof(float)))),
          ErrorCode::Format, path + ": truncated features");
  require(static_cast<bool>(is.read(reinterpret_cast<char*>(ds.labels.data()),
                                    static_cast<std::streamsize>(ds.labels.size()))),
          ErrorCode::Format, path + ": truncated labels");
  ds.validate();
  return ds;
}

}  // namespace moe
