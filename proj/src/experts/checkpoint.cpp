#include "experts/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "core/error.hpp"

namespace moe {

namespace {

constexpr char kMagic[4] = {'M', 'O', 'E', 'C'};

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint32_t read_u32(std::istream& is, const std::string& path) {
  uint32_t v = 0;
  require(static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof v)), ErrorCode::Format,
          path + ": truncated checkpoint");
  return v;
}

uint64_t read_u64(std::istream& is, const std::string& path) {
  uint64_t v = 0;
  require(static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof v)), ErrorCode::Format,
          path + ": truncated checkpoint");
  return v;
}

}  // namespace

void write_checkpoint_file(const std::string& path, const nlohmann::json& header,
                           const std::vector<Tensor>& blobs) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(os.is_open(), ErrorCode::Io, "cannot write " + path);
  os.write(kMagic, 4);
  write_u32(os, kCheckpointVersion);
  const std::string h = header.dump();
  write_u32(os, static_cast<uint32_t>(h.size()));
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  write_u64(os, blobs.size());
  for (const Tensor& t : blobs) {
    write_u64(os, t.data.size());
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  require(static_cast<bool>(os), ErrorCode::Io, "short write to " + path);
}

CheckpointFile read_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.is_open(), ErrorCode::Io, "cannot open " + path);
  char magic[4];
  require(static_cast<bool>(is.read(magic, 4)) && std::memcmp(magic, kMagic, 4) == 0,
          ErrorCode::Format, path + ": not a checkpoint file (bad magic)");
  uint32_t version = read_u32(is, path);
  require(version == kCheckpointVersion, ErrorCode::Format,
          path + ": checkpoint version " + std::to_string(version) + ", this build reads version " +
              std::to_string(kCheckpointVersion));
  uint32_t hlen = read_u32(is, path);
  std::string h(hlen, '\0');
  require(static_cast<bool>(is.read(h.data(), hlen)), ErrorCode::Format,
          path + ": truncated header");
  CheckpointFile file;
  file.header = nlohmann::json::parse(h, nullptr, /*allow_exceptions=*/false);
  require(!file.header.is_discarded(), ErrorCode::Format, path + ": corrupt header JSON");
  uint64_t nblobs = read_u64(is, path);
  file.blobs.resize(nblobs);
  for (uint64_t b = 0; b < nblobs; ++b) {
    uint64_t count = read_u64(is, path);
    file.blobs[b].resize(count);
    require(static_cast<bool>(is.read(reinterpret_cast<char*>(file.blobs[b].data()),
                                      static_cast<std::streamsize>(count * sizeof(float)))),
            ErrorCode::Format, path + ": truncated blob " + std::to_string(b));
  }
  return file;
}

nlohmann::json train_config_to_json(const TrainConfig& config) {
  return {{"learning_rate", config.learning_rate},
          {"epochs", config.epochs},
          {"batch_size", config.batch_size},
          {"seed", config.seed},
          {"momentum", config.momentum}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<float>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.momentum = j.at("momentum").get<float>();
  return c;
}

nlohmann::json norm_stats_to_json(const NormStats& stats) {
  return {{"mean", stats.mean}, {"stddev", stats.stddev}};
}

NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats s;
  s.mean = j.at("mean").get<std::vector<float>>();
  s.stddev = j.at("stddev").get<std::vector<float>>();
  return s;
}

void save_checkpoint(const ExpertModel& model, const std::string& path) {
  nlohmann::json header{
      {"kind", "expert"},
      {"in_channels", model.in_channels},
      {"class_count", model.class_count},
      {"dataset_tag", model.dataset_tag},
      {"classes", model.classes},
      {"global_offset", model.global_offset},
      {"norm", norm_stats_to_json(model.norm)},
      {"config", train_config_to_json(model.config)},
      {"final_accuracy", model.final_accuracy},
  };
  write_checkpoint_file(path, header, model.net.snapshot_params());
}

ExpertModel load_checkpoint(const std::string& path) {
  CheckpointFile file = read_checkpoint_file(path);
  const auto& h = file.header;
  require(h.value("kind", "") == "expert", ErrorCode::Format,
          path + ": checkpoint kind '" + h.value("kind", "") + "', expected 'expert'");
  ExpertModel model = build_lenet5(h.at("in_channels").get<int>(), h.at("class_count").get<int>());
  model.dataset_tag = h.at("dataset_tag").get<std::string>();
  model.classes = h.at("classes").get<std::vector<int>>();
  model.global_offset = h.at("global_offset").get<int>();
  model.norm = norm_stats_from_json(h.at("norm"));
  model.config = train_config_from_json(h.at("config"));
  model.final_accuracy = h.at("final_accuracy").get<double>();

  std::vector<Tensor> params = model.net.snapshot_params();
  require(params.size() == file.blobs.size(), ErrorCode::Format,
          path + ": blob count " + std::to_string(file.blobs.size()) + " != architecture's " +
              std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    require(params[i].data.size() == file.blobs[i].size(), ErrorCode::Format,
            path + ": blob " + std::to_string(i) + " size mismatch");
    params[i].data = std::move(file.blobs[i]);
  }
  model.net.load_params(params);
  return model;
}

}  // namespace moe
