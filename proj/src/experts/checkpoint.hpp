#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "experts/expert.hpp"

namespace moe {

// Checkpoint container: "MOEC" magic, u32 format version, u32 JSON header
// length, JSON header, then raw little-endian float32 blobs (u64 count
// prefix each). The header's "kind" field distinguishes expert/pan/fpan
// payloads sharing the container.
inline constexpr uint32_t kCheckpointVersion = 1;

void write_checkpoint_file(const std::string& path, const nlohmann::json& header,
                           const std::vector<Tensor>& blobs);

struct CheckpointFile {
  nlohmann::json header;
  std::vector<std::vector<float>> blobs;
};
CheckpointFile read_checkpoint_file(const std::string& path);

void save_checkpoint(const ExpertModel& model, const std::string& path);
ExpertModel load_checkpoint(const std::string& path);

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json norm_stats_to_json(const NormStats& stats);
NormStats norm_stats_from_json(const nlohmann::json& j);

}  // namespace moe
