#pragma once

// Experiment orchestration over the public C interface: dataset catalog,
// mixture presets, expert checkpoint cache, seeded end-to-end runs, CSV/
// JSON results and markdown report emission. Everything here consumes
// libmoegate strictly through moegate.h.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moegate.h"

namespace moeh {

class HarnessError : public std::runtime_error {
 public:
  enum class Kind { Config = 2, Data = 3, Numeric = 4 };
  HarnessError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  Kind kind_;
};

// Raises HarnessError (Data or Numeric by status) unless status == MOE_OK.
void check_status(moe_status status, const std::string& context);

// RAII wrappers over the C handles.
struct DatasetDeleter { void operator()(moe_dataset* p) const { moe_dataset_free(p); } };
struct ExpertDeleter { void operator()(moe_expert* p) const { moe_expert_free(p); } };
struct MixtureDeleter { void operator()(moe_mixture* p) const { moe_mixture_free(p); } };
struct AttributionDeleter { void operator()(moe_attribution* p) const { moe_attribution_free(p); } };
struct PanDeleter { void operator()(moe_pan* p) const { moe_pan_free(p); } };
struct FpanDeleter { void operator()(moe_fpan* p) const { moe_fpan_free(p); } };
using DatasetPtr = std::unique_ptr<moe_dataset, DatasetDeleter>;
using ExpertPtr = std::unique_ptr<moe_expert, ExpertDeleter>;
using MixturePtr = std::unique_ptr<moe_mixture, MixtureDeleter>;
using AttributionPtr = std::unique_ptr<moe_attribution, AttributionDeleter>;
using PanPtr = std::unique_ptr<moe_pan, PanDeleter>;
using FpanPtr = std::unique_ptr<moe_fpan, FpanDeleter>;

// Mean of the component experts' own-test accuracies: the gating ceiling
// for balanced mixtures.
double ideal_target(const std::vector<double>& expert_accuracies);

struct Hyper {
  double learning_rate = 0.01;
  int epochs = 10;
  int batch_size = 64;
  double momentum = 0.9;

  moe_train_config to_config(uint64_t seed) const;
  nlohmann::json to_json() const;
  static Hyper from_json(const nlohmann::json& j);
};

// One expert slot of a mixture: "mnist", "mnist:0-4", "cifar10", ...
struct ComponentSpec {
  std::string tag;           // dataset tag (mnist | fashion | kmnist | cifar10)
  std::vector<int> classes;  // empty = all classes

  std::string name() const;  // canonical "tag" or "tag:a-b"
  static ComponentSpec parse(const std::string& text);
};

// Mixture presets: disjoint-mnist, mnist-cifar10, fashion-kmnist, or an
// explicit comma-separated component list.
std::vector<ComponentSpec> parse_mixture(const std::string& text);

struct ExperimentConfig {
  std::vector<uint64_t> seeds{1, 2, 3};
  std::string data_dir;
  std::string out_dir;
  std::string model_dir;  // defaults to <out_dir>/models
  std::vector<std::string> mixtures{"disjoint-mnist", "mnist-cifar10"};
  std::vector<std::string> transfer_eval_mixtures{"fashion-kmnist"};
  std::vector<std::string> methods{"experts", "naive", "augment",
                                   "pan",     "sc1",   "upan-sc2", "fpan"};
  std::map<std::string, Hyper> hyper;  // per dataset tag; "default" fallback
  int jobs = 1;
  uint64_t sample_cap = 0;  // 0 = full datasets; otherwise first N samples

  void validate() const;
  nlohmann::json to_json() const;  // canonical (sorted keys via nlohmann)
  static ExperimentConfig from_json(const nlohmann::json& j);
  uint64_t config_hash() const;  // FNV-1a over the canonical JSON dump
  Hyper hyper_for(const std::string& tag) const;
};

// "gauss:0.05,0.1,..." bundles per Table-row presets; name -> specs.
const std::vector<std::pair<std::string, std::vector<std::string>>>& augment_presets();

// Dataset access (loads are cached per harness instance).
class DataCatalog {
 public:
  explicit DataCatalog(std::string data_dir, uint64_t sample_cap = 0);
  uint64_t sample_cap() const { return sample_cap_; }
  // component dataset, padded to 32x32, train or test split
  const moe_dataset* component(const ComponentSpec& spec, bool train);
  // raw (unpadded) base dataset
  const moe_dataset* base(const std::string& tag, bool train);

 private:
  std::string data_dir_;
  uint64_t sample_cap_ = 0;
  std::map<std::string, DatasetPtr> cache_;
};

// Trains or loads the cached checkpoint for one component at one seed.
ExpertPtr obtain_expert(DataCatalog& data, const ComponentSpec& spec, uint64_t seed,
                        const Hyper& hyper, const std::string& model_dir, int global_offset);

// One results row; `value` is NaN for structurally absent cells (reported
// as "n/a" in CSV/tables).
struct ResultRow {
  uint64_t seed = 0;
  std::string mixture;
  std::string metric;
  std::string detail;
  double value = 0.0;
};

std::string csv_line(const ResultRow& row);

// Full seeded pipeline for one config; returns all rows and writes
// seed CSVs, aggregate.json, config.json and metadata.json under
// <out_dir>/run-<hash>/. Returns the run directory.
std::string run_experiment(const ExperimentConfig& config);

// Aggregates per-seed rows into mean-per-(mixture, metric, detail).
std::map<std::string, double> aggregate_rows(const std::vector<ResultRow>& rows);

// report.md with the published-value comparison columns; reads
// aggregate.json from the run directory.
void write_report(const std::string& run_dir);

std::string build_identifier();

}  // namespace moeh
