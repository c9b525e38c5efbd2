#include "harness/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "harness/reference_values.hpp"

namespace fs = std::filesystem;

namespace moeh {

void check_status(moe_status status, const std::string& context) {
  if (status == MOE_OK) return;
  std::string msg = context + ": " + moe_status_name(status) + ": " + moe_last_error();
  switch (status) {
    case MOE_ERR_INVALID_ARGUMENT:
      throw HarnessError(HarnessError::Kind::Config, msg);
    case MOE_ERR_NUMERIC:
      throw HarnessError(HarnessError::Kind::Numeric, msg);
    default:
      throw HarnessError(HarnessError::Kind::Data, msg);
  }
}

double ideal_target(const std::vector<double>& expert_accuracies) {
  if (expert_accuracies.empty())
    throw HarnessError(HarnessError::Kind::Config, "ideal target of zero experts");
  double sum = 0.0;
  for (double a : expert_accuracies) sum += a;
  return sum / static_cast<double>(expert_accuracies.size());
}

moe_train_config Hyper::to_config(uint64_t seed) const {
  moe_train_config c = moe_train_config_default();
  c.learning_rate = static_cast<float>(learning_rate);
  c.epochs = epochs;
  c.batch_size = batch_size;
  c.momentum = static_cast<float>(momentum);
  c.seed = seed;
  return c;
}

nlohmann::json Hyper::to_json() const {
  return {{"learning_rate", learning_rate},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"momentum", momentum}};
}

Hyper Hyper::from_json(const nlohmann::json& j) {
  Hyper h;
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.epochs = j.value("epochs", h.epochs);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.momentum = j.value("momentum", h.momentum);
  return h;
}

std::string ComponentSpec::name() const {
  if (classes.empty()) return tag;
  return tag + ":" + std::to_string(classes.front()) + "-" + std::to_string(classes.back());
}

ComponentSpec ComponentSpec::parse(const std::string& text) {
  ComponentSpec spec;
  auto colon = text.find(':');
  spec.tag = text.substr(0, colon);
  if (spec.tag != "mnist" && spec.tag != "fashion" && spec.tag != "kmnist" &&
      spec.tag != "cifar10") {
    throw HarnessError(HarnessError::Kind::Config,
                       "unknown dataset tag '" + spec.tag +
                           "' (mnist|fashion|kmnist|cifar10)");
  }
  if (colon == std::string::npos) return spec;
  std::string range = text.substr(colon + 1);
  auto dash = range.find('-');
  if (dash == std::string::npos)
    throw HarnessError(HarnessError::Kind::Config,
                       "bad class range '" + range + "' in '" + text + "' (want lo-hi)");
  int lo = 0, hi = 0;
  try {
    lo = std::stoi(range.substr(0, dash));
    hi = std::stoi(range.substr(dash + 1));
  } catch (const std::exception&) {
    throw HarnessError(HarnessError::Kind::Config, "bad class range '" + range + "'");
  }
  if (lo < 0 || hi < lo)
    throw HarnessError(HarnessError::Kind::Config, "bad class range '" + range + "'");
  for (int c = lo; c <= hi; ++c) spec.classes.push_back(c);
  return spec;
}

std::vector<ComponentSpec> parse_mixture(const std::string& text) {
  std::string expanded = text;
  if (text == "disjoint-mnist") expanded = "mnist:0-4,mnist:5-9";
  if (text == "mnist-cifar10") expanded = "mnist,cifar10";
  if (text == "fashion-kmnist") expanded = "fashion,kmnist";
  std::vector<ComponentSpec> specs;
  std::stringstream ss(expanded);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) specs.push_back(ComponentSpec::parse(tok));
  }
  if (specs.size() < 2)
    throw HarnessError(HarnessError::Kind::Config,
                       "mixture '" + text + "' needs at least two components");
  return specs;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw HarnessError(HarnessError::Kind::Config, "seed list is empty");
  if (methods.empty()) throw HarnessError(HarnessError::Kind::Config, "method list is empty");
  if (mixtures.empty()) throw HarnessError(HarnessError::Kind::Config, "mixture list is empty");
  static const std::vector<std::string> known{"experts", "naive",    "augment", "pan",
                                              "sc1",     "upan-sc2", "fpan"};
  for (const auto& m : methods) {
    if (std::find(known.begin(), known.end(), m) == known.end())
      throw HarnessError(HarnessError::Kind::Config, "unknown method group '" + m + "'");
  }
  for (const auto& mix : mixtures) parse_mixture(mix);
  for (const auto& mix : transfer_eval_mixtures) parse_mixture(mix);
  if (data_dir.empty())
    throw HarnessError(HarnessError::Kind::Config,
                       "data directory not set (--data-dir or MOE_DATA_DIR)");
  if (out_dir.empty())
    throw HarnessError(HarnessError::Kind::Config,
                       "output directory not set (--out-dir or MOE_OUT_DIR)");
  if (jobs < 1) throw HarnessError(HarnessError::Kind::Config, "jobs must be >= 1");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json hj = nlohmann::json::object();
  for (const auto& [tag, h] : hyper) hj[tag] = h.to_json();
  return {{"seeds", seeds},
          {"data_dir", data_dir},
          {"out_dir", out_dir},
          {"model_dir", model_dir},
          {"mixtures", mixtures},
          {"transfer_eval_mixtures", transfer_eval_mixtures},
          {"methods", methods},
          {"hyper", hj},
          {"jobs", jobs},
          {"sample_cap", sample_cap}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  c.data_dir = j.value("data_dir", c.data_dir);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.model_dir = j.value("model_dir", c.model_dir);
  if (j.contains("mixtures")) c.mixtures = j.at("mixtures").get<std::vector<std::string>>();
  if (j.contains("transfer_eval_mixtures"))
    c.transfer_eval_mixtures = j.at("transfer_eval_mixtures").get<std::vector<std::string>>();
  if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
  if (j.contains("hyper")) {
    for (auto it = j.at("hyper").begin(); it != j.at("hyper").end(); ++it)
      c.hyper[it.key()] = Hyper::from_json(it.value());
  }
  c.jobs = j.value("jobs", c.jobs);
  c.sample_cap = j.value("sample_cap", c.sample_cap);
  return c;
}

uint64_t ExperimentConfig::config_hash() const {
  // FNV-1a 64
  const std::string dump = to_json().dump();
  uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

Hyper ExperimentConfig::hyper_for(const std::string& tag) const {
  if (auto it = hyper.find(tag); it != hyper.end()) return it->second;
  if (auto it = hyper.find("default"); it != hyper.end()) return it->second;
  return Hyper{};
}

const std::vector<std::pair<std::string, std::vector<std::string>>>& augment_presets() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> presets{
      {"single-sharpen", {"sharpen:0.5"}},
      {"sharpen-sweep", {"sharpen:0.1,0.3,0.5,0.7,1.0"}},
      {"single-gauss", {"gauss:0.1"}},
      {"gauss-5x", {"gauss:0.1,0.1,0.1,0.1,0.1"}},
      {"gauss-sweep", {"gauss:0.05,0.1,0.3,0.5,0.7,1"}},
      {"single-poisson", {"poisson:0.1"}},
      {"poisson-5x", {"poisson:0.1,0.1,0.1,0.1,0.1"}},
      {"poisson-sweep", {"poisson:0.05,0.1,0.3,0.5,0.7,1"}},
      {"flips", {"hflip", "vflip"}},
      {"crop", {"crop:4"}},
  };
  return presets;
}

DataCatalog::DataCatalog(std::string data_dir, uint64_t sample_cap)
    : data_dir_(std::move(data_dir)), sample_cap_(sample_cap) {}

const moe_dataset* DataCatalog::base(const std::string& tag, bool train) {
  std::string key = tag + (train ? "|train" : "|test");
  if (auto it = cache_.find(key); it != cache_.end()) return it->second.get();
  moe_dataset* raw = nullptr;
  if (tag == "cifar10") {
    check_status(moe_dataset_load_cifar10((fs::path(data_dir_) / "cifar10").string().c_str(),
                                          train ? 1 : 0, &raw),
                 "loading cifar10");
  } else {
    fs::path dir = fs::path(data_dir_) / tag;
    std::string stem = train ? "train" : "t10k";
    check_status(moe_dataset_load_idx((dir / (stem + "-images-idx3-ubyte")).string().c_str(),
                                      (dir / (stem + "-labels-idx1-ubyte")).string().c_str(),
                                      tag.c_str(), 10, &raw),
                 "loading " + tag);
  }
  cache_[key] = DatasetPtr(raw);
  return raw;
}

const moe_dataset* DataCatalog::component(const ComponentSpec& spec, bool train) {
  std::string key = spec.name() + (train ? "|train" : "|test") + "|32";
  if (auto it = cache_.find(key); it != cache_.end()) return it->second.get();
  const moe_dataset* src = base(spec.tag, train);
  DatasetPtr holder;
  if (!spec.classes.empty()) {
    moe_dataset* split = nullptr;
    check_status(
        moe_dataset_split_classes(src, spec.classes.data(), spec.classes.size(), &split),
        "splitting " + spec.name());
    holder.reset(split);
    src = split;
  }
  moe_dataset* padded = nullptr;
  check_status(moe_dataset_pad(src, 32, 32, &padded), "padding " + spec.name());
  if (sample_cap_ > 0) {
    DatasetPtr padded_holder(padded);
    moe_dataset* capped = nullptr;
    check_status(moe_dataset_take(padded, sample_cap_, &capped), "capping " + spec.name());
    cache_[key] = DatasetPtr(capped);
    return capped;
  }
  cache_[key] = DatasetPtr(padded);
  return padded;
}

namespace {

std::string sanitize(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    if (c == ':' || c == '/' || c == ',') c = '-';
  }
  return out;
}

uint64_t hyper_hash(const Hyper& h) {
  const std::string dump = h.to_json().dump();
  uint64_t x = 14695981039346656037ull;
  for (unsigned char ch : dump) {
    x ^= ch;
    x *= 1099511628211ull;
  }
  return x;
}

std::string hex16(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

ExpertPtr obtain_expert(DataCatalog& data, const ComponentSpec& spec, uint64_t seed,
                        const Hyper& hyper, const std::string& model_dir, int global_offset) {
  fs::create_directories(model_dir);
  const std::string cap_suffix =
      data.sample_cap() > 0 ? "_c" + std::to_string(data.sample_cap()) : "";
  const std::string path =
      (fs::path(model_dir) / (sanitize(spec.name()) + "_s" + std::to_string(seed) + "_h" +
                              hex16(hyper_hash(hyper)).substr(0, 8) + cap_suffix + ".moec"))
          .string();
  if (fs::exists(path)) {
    moe_expert* loaded = nullptr;
    check_status(moe_expert_load(path.c_str(), &loaded), "loading checkpoint " + path);
    return ExpertPtr(loaded);
  }
  const moe_dataset* train = data.component(spec, /*train=*/true);
  moe_train_config cfg = hyper.to_config(seed);
  moe_expert* expert = nullptr;
  std::vector<int> classes = spec.classes;
  std::fprintf(stderr, "[moe] training expert %s seed %llu (%d epochs)\n", spec.name().c_str(),
               static_cast<unsigned long long>(seed), cfg.epochs);
  check_status(moe_expert_train(train, spec.name().c_str(),
                                classes.empty() ? nullptr : classes.data(), classes.size(),
                                global_offset, &cfg, &expert),
               "training expert " + spec.name());
  ExpertPtr holder(expert);
  double acc = 0.0;
  check_status(moe_expert_evaluate(expert, data.component(spec, false), &acc),
               "evaluating expert " + spec.name());
  check_status(moe_expert_note_accuracy(holder.get(), acc), "recording accuracy");
  check_status(moe_expert_save(holder.get(), path.c_str()), "saving checkpoint " + path);
  return holder;
}

std::string csv_line(const ResultRow& row) {
  char value[32];
  if (std::isnan(row.value)) {
    std::snprintf(value, sizeof value, "n/a");
  } else {
    std::snprintf(value, sizeof value, "%.9g", row.value);
  }
  return std::to_string(row.seed) + "," + row.mixture + "," + row.metric + "," + row.detail +
         "," + value;
}

std::map<std::string, double> aggregate_rows(const std::vector<ResultRow>& rows) {
  std::map<std::string, std::pair<double, int>> sums;
  for (const ResultRow& r : rows) {
    if (std::isnan(r.value)) {
      sums.emplace(r.mixture + "|" + r.metric + "|" + r.detail,
                   std::make_pair(std::nan(""), 0));
      continue;
    }
    auto& slot = sums[r.mixture + "|" + r.metric + "|" + r.detail];
    slot.first += r.value;
    slot.second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [key, sc] : sums)
    out[key] = sc.second == 0 ? std::nan("") : sc.first / sc.second;
  return out;
}

std::string build_identifier() {
  std::ostringstream os;
#if defined(__clang__)
  os << "clang-" << __clang_major__ << "." << __clang_minor__;
#elif defined(__GNUC__)
  os << "gcc-" << __GNUC__ << "." << __GNUC_MINOR__;
#else
  os << "cxx-unknown";
#endif
  os << "-moegate-" << moe_version();
  return os.str();
}

namespace {

struct MixtureBundle {
  std::string name;
  std::vector<ComponentSpec> components;
  std::vector<ExpertPtr> experts;
  std::vector<const moe_dataset*> trains;
  std::vector<const moe_dataset*> tests;
  MixturePtr mixture;
  std::vector<double> expert_accs;
  std::map<std::string, PanPtr> upans;  // by feature kind
};

MixtureBundle build_bundle(DataCatalog& data, const ExperimentConfig& config,
                           const std::string& mixture_name, uint64_t seed) {
  MixtureBundle b;
  b.name = mixture_name;
  b.components = parse_mixture(mixture_name);
  int offset = 0;
  for (const ComponentSpec& comp : b.components) {
    b.experts.push_back(
        obtain_expert(data, comp, seed, config.hyper_for(comp.tag), config.model_dir, offset));
    b.trains.push_back(data.component(comp, true));
    const moe_dataset* test = data.component(comp, false);
    b.tests.push_back(test);
    moe_dataset_info info;
    check_status(moe_dataset_info_get(test, &info), "dataset info");
    offset += info.class_count;
  }
  std::vector<const moe_expert*> raw;
  for (auto& e : b.experts) raw.push_back(e.get());
  moe_mixture* mix = nullptr;
  check_status(moe_mixture_create(raw.data(), raw.size(), b.trains.data(), b.tests.data(), seed,
                                  &mix),
               "building mixture " + mixture_name);
  b.mixture.reset(mix);
  for (size_t i = 0; i < b.experts.size(); ++i) {
    double acc = 0.0;
    check_status(moe_expert_evaluate(raw[i], b.tests[i], &acc),
                 "evaluating expert " + b.components[i].name());
    b.expert_accs.push_back(acc);
  }
  return b;
}

bool wants(const ExperimentConfig& config, const std::string& group) {
  return std::find(config.methods.begin(), config.methods.end(), group) != config.methods.end();
}

// Per-expert attribution sets: train split for training PANs, test split
// for the published-table style evaluation.
AttributionPtr attribution_for(const MixtureBundle& b, int expert_idx, const char* kind,
                               bool train) {
  moe_attribution* attr = nullptr;
  check_status(
      moe_mixture_attribution(b.mixture.get(), expert_idx, kind, train ? 1 : 0, &attr),
      "building attribution rows");
  return AttributionPtr(attr);
}

std::vector<ResultRow> run_seed(DataCatalog& data, const ExperimentConfig& config,
                                uint64_t seed) {
  std::vector<ResultRow> rows;
  auto push = [&](const std::string& mixture, const std::string& metric,
                  const std::string& detail, double value) {
    rows.push_back({seed, mixture, metric, detail, value});
  };

  // primary mixtures first, then evaluation-only mixtures for transfers
  std::vector<std::string> all_names = config.mixtures;
  for (const auto& t : config.transfer_eval_mixtures) {
    if (std::find(all_names.begin(), all_names.end(), t) == all_names.end())
      all_names.push_back(t);
  }
  const bool transfers = wants(config, "upan-sc2");
  std::map<std::string, MixtureBundle> bundles;
  for (const auto& name : all_names) {
    bool primary =
        std::find(config.mixtures.begin(), config.mixtures.end(), name) != config.mixtures.end();
    if (!primary && !transfers) continue;
    bundles.emplace(name, build_bundle(data, config, name, seed));
  }

  const Hyper pan_hyper = config.hyper_for("pan");
  const std::vector<std::string> pan_kinds{"logits", "finalfc", "stats"};
  const std::vector<std::string> upan_kinds{"logits", "stats"};

  for (const auto& name : all_names) {
    auto it = bundles.find(name);
    if (it == bundles.end()) continue;
    MixtureBundle& b = it->second;
    bool primary =
        std::find(config.mixtures.begin(), config.mixtures.end(), name) != config.mixtures.end();

    if (wants(config, "experts")) {
      for (size_t i = 0; i < b.components.size(); ++i)
        push(name, "expert", b.components[i].name(), b.expert_accs[i]);
      push(name, "ideal", "target", ideal_target(b.expert_accs));
    }
    if (!primary) continue;

    if (wants(config, "naive")) {
      for (const char* stat : {"argmax", "std", "ratio", "overall-ratio", "q3diff"}) {
        double acc = 0.0;
        check_status(moe_gate_naive(b.mixture.get(), stat, &acc), "naive gating");
        push(name, "naive", stat, acc);
      }
    }

    if (wants(config, "augment")) {
      for (const auto& [preset, specs] : augment_presets()) {
        std::vector<const char*> raw;
        for (const auto& s : specs) raw.push_back(s.c_str());
        double mean_acc = 0.0, vote_acc = 0.0;
        check_status(moe_gate_augmented(b.mixture.get(), raw.data(), raw.size(), seed,
                                        &mean_acc, &vote_acc),
                     "augmented gating " + preset);
        push(name, "augment", preset + "|mean", mean_acc);
        push(name, "augment", preset + "|vote", vote_acc);
        std::fprintf(stderr, "[moe] %s augment %s done\n", name.c_str(), preset.c_str());
      }
    }

    if (wants(config, "pan") || wants(config, "sc1")) {
      for (const std::string& kind : pan_kinds) {
        std::vector<PanPtr> pans;
        for (size_t i = 0; i < b.experts.size(); ++i) {
          AttributionPtr train_rows = attribution_for(b, static_cast<int>(i), kind.c_str(), true);
          moe_train_config cfg = pan_hyper.to_config(seed);
          moe_pan* pan = nullptr;
          check_status(moe_pan_train(train_rows.get(), kind.c_str(), static_cast<int>(i), &cfg,
                                     &pan),
                       "training PAN");
          pans.emplace_back(pan);
          if (wants(config, "pan")) {
            AttributionPtr test_rows = attribution_for(b, static_cast<int>(i), kind.c_str(), false);
            double acc = 0.0;
            check_status(moe_pan_evaluate(pan, test_rows.get(), &acc), "evaluating PAN");
            push(name, "pan", b.components[i].name() + "|" + kind, acc);
          }
        }
        if (wants(config, "sc1")) {
          std::vector<const moe_pan*> raw;
          for (auto& p : pans) raw.push_back(p.get());
          double acc = 0.0;
          check_status(moe_gate_sc1(b.mixture.get(), raw.data(), raw.size(), &acc), "SC1");
          push(name, "sc1", kind, acc);
        }
      }
    }

    if (wants(config, "upan-sc2")) {
      for (const std::string& kind : upan_kinds) {
        moe_attribution* merged = nullptr;
        moe_status st =
            moe_mixture_attribution(b.mixture.get(), -1, kind.c_str(), 1, &merged);
        if (st == MOE_ERR_SHAPE_MISMATCH) {
          push(name, "upan", "self|" + kind + "|attrib", std::nan(""));
          push(name, "upan", "self|" + kind + "|sc2", std::nan(""));
          continue;
        }
        check_status(st, "building merged attribution rows");
        AttributionPtr merged_holder(merged);
        moe_train_config cfg = pan_hyper.to_config(seed);
        moe_pan* upan = nullptr;
        check_status(moe_pan_train(merged, kind.c_str(), -1, &cfg, &upan), "training UPAN");
        b.upans[kind] = PanPtr(upan);

        moe_attribution* merged_test = nullptr;
        check_status(moe_mixture_attribution(b.mixture.get(), -1, kind.c_str(), 0, &merged_test),
                     "building merged test rows");
        AttributionPtr merged_test_holder(merged_test);
        double attrib = 0.0, sc2 = 0.0;
        check_status(moe_pan_evaluate(upan, merged_test, &attrib), "evaluating UPAN");
        check_status(moe_gate_sc2(b.mixture.get(), upan, &sc2), "SC2");
        push(name, "upan", "self|" + kind + "|attrib", attrib);
        push(name, "upan", "self|" + kind + "|sc2", sc2);
      }
    }

    if (wants(config, "fpan")) {
      auto stats_upan = b.upans.find("stats");
      if (stats_upan == b.upans.end()) {
        // fpan needs an SC2 teacher; train the stats UPAN if the group
        // selection skipped it
        moe_attribution* merged = nullptr;
        check_status(moe_mixture_attribution(b.mixture.get(), -1, "stats", 1, &merged),
                     "building merged attribution rows");
        AttributionPtr merged_holder(merged);
        moe_train_config cfg = pan_hyper.to_config(seed);
        moe_pan* upan = nullptr;
        check_status(moe_pan_train(merged, "stats", -1, &cfg, &upan), "training UPAN");
        stats_upan = b.upans.emplace("stats", PanPtr(upan)).first;
      }
      moe_train_config cfg = config.hyper_for("fpan").to_config(seed);
      moe_fpan* fpan = nullptr;
      double agreement = 0.0, routing_pool = 0.0;
      check_status(moe_fpan_train(b.mixture.get(), stats_upan->second.get(), &cfg, &fpan,
                                  &agreement, &routing_pool),
                   "training FPAN");
      FpanPtr fpan_holder(fpan);
      double routing_test = 0.0;
      check_status(moe_fpan_evaluate(fpan, b.mixture.get(), &routing_test), "evaluating FPAN");
      push(name, "fpan", "teacher-agreement", agreement);
      push(name, "fpan", "routing-pool", routing_pool);
      push(name, "fpan", "routing-test", routing_test);
    }
  }

  // transfers: UPAN trained on one mixture, applied to every other bundle
  if (transfers) {
    for (const auto& train_name : config.mixtures) {
      MixtureBundle& trained = bundles.at(train_name);
      for (const auto& eval_name : all_names) {
        if (eval_name == train_name) continue;
        auto eit = bundles.find(eval_name);
        if (eit == bundles.end()) continue;
        MixtureBundle& target = eit->second;
        for (const std::string& kind : upan_kinds) {
          const std::string detail = eval_name + "|" + kind;
          auto upan_it = trained.upans.find(kind);
          if (upan_it == trained.upans.end()) {
            push(train_name, "upan-transfer", detail + "|attrib", std::nan(""));
            push(train_name, "upan-transfer", detail + "|sc2", std::nan(""));
            continue;
          }
          moe_attribution* foreign_rows = nullptr;
          moe_status st =
              moe_mixture_attribution(target.mixture.get(), -1, kind.c_str(), 0, &foreign_rows);
          if (st == MOE_ERR_SHAPE_MISMATCH) {
            push(train_name, "upan-transfer", detail + "|attrib", std::nan(""));
            push(train_name, "upan-transfer", detail + "|sc2", std::nan(""));
            continue;
          }
          check_status(st, "building transfer rows");
          AttributionPtr rows_holder(foreign_rows);
          double attrib = 0.0, sc2 = 0.0;
          moe_status attrib_st =
              moe_pan_evaluate(upan_it->second.get(), foreign_rows, &attrib);
          moe_status sc2_st = moe_gate_sc2(target.mixture.get(), upan_it->second.get(), &sc2);
          if (attrib_st == MOE_ERR_SHAPE_MISMATCH || sc2_st == MOE_ERR_SHAPE_MISMATCH) {
            push(train_name, "upan-transfer", detail + "|attrib", std::nan(""));
            push(train_name, "upan-transfer", detail + "|sc2", std::nan(""));
            continue;
          }
          check_status(attrib_st, "transfer attribution");
          check_status(sc2_st, "transfer SC2");
          push(train_name, "upan-transfer", detail + "|attrib", attrib);
          push(train_name, "upan-transfer", detail + "|sc2", sc2);
        }
      }
    }
  }
  return rows;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc);
  if (!os.is_open()) throw HarnessError(HarnessError::Kind::Data, "cannot write " + path);
  os << content;
}

}  // namespace

std::string run_experiment(const ExperimentConfig& raw_config) {
  ExperimentConfig config = raw_config;
  if (config.model_dir.empty())
    config.model_dir = (fs::path(config.out_dir) / "models").string();
  config.validate();

  const std::string run_dir =
      (fs::path(config.out_dir) / ("run-" + hex16(config.config_hash()))).string();
  fs::create_directories(run_dir);

  DataCatalog data(config.data_dir, config.sample_cap);
  // touch every dataset now so missing files fail before any training
  for (const auto& group : {config.mixtures, config.transfer_eval_mixtures}) {
    for (const auto& name : group) {
      for (const ComponentSpec& comp : parse_mixture(name)) {
        data.component(comp, true);
        data.component(comp, false);
      }
    }
  }

  nlohmann::json config_json = config.to_json();
  config_json["config_hash"] = hex16(config.config_hash());
  write_text_file((fs::path(run_dir) / "config.json").string(), config_json.dump(2) + "\n");

  std::vector<ResultRow> all_rows;
  std::mutex mu;
  std::vector<uint64_t> seeds = config.seeds;
  std::atomic<size_t> next{0};
  auto worker = [&] {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= seeds.size()) break;
      uint64_t seed = seeds[i];
      std::fprintf(stderr, "[moe] running seed %llu\n", static_cast<unsigned long long>(seed));
      std::vector<ResultRow> rows = run_seed(data, config, seed);
      std::string csv = "seed,mixture,metric,detail,value\n";
      for (const ResultRow& r : rows) csv += csv_line(r) + "\n";
      write_text_file((fs::path(run_dir) / ("seed_" + std::to_string(seed) + ".csv")).string(),
                      csv);
      std::lock_guard<std::mutex> lock(mu);
      all_rows.insert(all_rows.end(), rows.begin(), rows.end());
    }
  };
  if (config.jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < config.jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::sort(all_rows.begin(), all_rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.seed, a.mixture, a.metric, a.detail) <
           std::tie(b.seed, b.mixture, b.metric, b.detail);
  });
  auto means = aggregate_rows(all_rows);
  nlohmann::json agg = nlohmann::json::object();
  for (const auto& [key, value] : means) {
    if (std::isnan(value))
      agg[key] = nullptr;
    else
      agg[key] = value;
  }
  nlohmann::json aggregate{{"config_hash", hex16(config.config_hash())},
                           {"seeds", config.seeds},
                           {"means", agg}};
  write_text_file((fs::path(run_dir) / "aggregate.json").string(), aggregate.dump(2) + "\n");

  auto now = std::chrono::system_clock::now().time_since_epoch();
  nlohmann::json metadata{
      {"timestamp_unix_ms",
       std::chrono::duration_cast<std::chrono::milliseconds>(now).count()},
      {"build", build_identifier()},
      {"config_hash", hex16(config.config_hash())}};
  write_text_file((fs::path(run_dir) / "metadata.json").string(), metadata.dump(2) + "\n");

  write_report(run_dir);
  return run_dir;
}

namespace {

struct Agg {
  nlohmann::json means;

  std::optional<double> get(const std::string& key) const {
    auto it = means.find(key);
    if (it == means.end() || it->is_null()) return std::nullopt;
    return it->get<double>();
  }
};

std::string cell(std::optional<double> repo) {
  if (!repo) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *repo);
  return buf;
}

std::string cell_with_ref(std::optional<double> repo, double reference) {
  if (!repo) return "n/a (ref " + cell(reference) + ")";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f (ref %.4f, %+.4f)", *repo, reference, *repo - reference);
  return buf;
}

std::string cell_with_ref(std::optional<double> repo, std::optional<double> reference) {
  if (!reference) return cell(repo);
  return cell_with_ref(repo, *reference);
}

}  // namespace

void write_report(const std::string& run_dir) {
  std::ifstream is(fs::path(run_dir) / "aggregate.json");
  if (!is.is_open())
    throw HarnessError(HarnessError::Kind::Data, "no aggregate.json under " + run_dir);
  nlohmann::json aggregate = nlohmann::json::parse(is);
  Agg agg{aggregate.at("means")};

  std::ostringstream md;
  md << "# moegate results\n\n";
  md << "Config hash: `" << aggregate.at("config_hash").get<std::string>() << "`; seeds: ";
  for (size_t i = 0; i < aggregate.at("seeds").size(); ++i)
    md << (i ? ", " : "") << aggregate.at("seeds")[i].get<uint64_t>();
  md << ". Cells show the run mean, the published reference, and the delta.\n";

  struct NamedRef {
    const char* key;
    const char* label;
    double ref;
  };

  md << "\n## Expert baselines\n\n| dataset | accuracy |\n|---|---|\n";
  const NamedRef experts[] = {
      {"disjoint-mnist|expert|mnist:0-4", "mnist 0-4", ref::kExpertMnist04},
      {"disjoint-mnist|expert|mnist:5-9", "mnist 5-9", ref::kExpertMnist59},
      {"mnist-cifar10|expert|mnist", "mnist", ref::kExpertMnist},
      {"mnist-cifar10|expert|cifar10", "cifar10", ref::kExpertCifar10},
      {"fashion-kmnist|expert|fashion", "fashion", ref::kExpertFashion},
      {"fashion-kmnist|expert|kmnist", "kmnist", ref::kExpertKmnist},
  };
  for (const auto& e : experts) {
    if (auto v = agg.get(e.key); v || true)
      md << "| " << e.label << " | " << cell_with_ref(agg.get(e.key), e.ref) << " |\n";
  }
  md << "| ideal target (disjoint mnist) | "
     << cell_with_ref(agg.get("disjoint-mnist|ideal|target"), ref::kIdealDisjointMnist)
     << " |\n";
  md << "| ideal target (mnist+cifar10) | "
     << cell_with_ref(agg.get("mnist-cifar10|ideal|target"), ref::kIdealMnistCifar10) << " |\n";

  md << "\n## Naive concatenation\n\n"
     << "| problem | argmax | std | ratio | overall-ratio | q3diff |\n|---|---|---|---|---|---|\n";
  const struct {
    const char* mixture;
    const char* label;
    double refs[5];
  } naive_rows[] = {
      {"disjoint-mnist", "disjoint mnist",
       {ref::kNaiveArgmaxDisjoint, ref::kNaiveStdDisjoint, ref::kNaiveRatioDisjoint,
        ref::kNaiveOverallRatioDisjoint, ref::kNaiveQ3DiffDisjoint}},
      {"mnist-cifar10", "mnist+cifar10",
       {ref::kNaiveArgmaxMnistCifar, ref::kNaiveStdMnistCifar, ref::kNaiveRatioMnistCifar,
        ref::kNaiveOverallRatioMnistCifar, ref::kNaiveQ3DiffMnistCifar}},
  };
  for (const auto& row : naive_rows) {
    md << "| " << row.label << " |";
    const char* stats[] = {"argmax", "std", "ratio", "overall-ratio", "q3diff"};
    for (int s = 0; s < 5; ++s) {
      md << " "
         << cell_with_ref(agg.get(std::string(row.mixture) + "|naive|" + stats[s]), row.refs[s])
         << " |";
    }
    md << "\n";
  }

  md << "\n## Augmented multi-pass gating\n\n"
     << "| problem | augmentation | mean | vote |\n|---|---|---|---|\n";
  for (const auto& row : naive_rows) {
    for (const auto& aug : ref::kAugmentRows) {
      const bool disjoint = std::string(row.mixture) == "disjoint-mnist";
      md << "| " << row.label << " | " << aug.preset << " | "
         << cell_with_ref(agg.get(std::string(row.mixture) + "|augment|" +
                                  std::string(aug.preset) + "|mean"),
                          disjoint ? aug.disjoint_mean : aug.mnist_cifar_mean)
         << " | "
         << cell_with_ref(agg.get(std::string(row.mixture) + "|augment|" +
                                  std::string(aug.preset) + "|vote"),
                          disjoint ? aug.disjoint_vote : aug.mnist_cifar_vote)
         << " |\n";
    }
  }

  md << "\n## Pattern attribution accuracy\n\n"
     << "| expert | logits | final FC | logit stats |\n|---|---|---|---|\n";
  auto pan_row = [&](const char* mixture, const ref::PanRef& r) {
    md << "| " << r.positive << " |";
    const char* kinds[] = {"logits", "finalfc", "stats"};
    const double refs[] = {r.logits, r.finalfc, r.stats};
    for (int k = 0; k < 3; ++k) {
      md << " "
         << cell_with_ref(
                agg.get(std::string(mixture) + "|pan|" + r.positive + "|" + kinds[k]), refs[k])
         << " |";
    }
    md << "\n";
  };
  for (const auto& r : ref::kPanDisjoint) pan_row("disjoint-mnist", r);
  for (const auto& r : ref::kPanMnistCifar) pan_row("mnist-cifar10", r);

  md << "\n## Smart coordinator SC1\n\n"
     << "| problem | logits | final FC | logit stats |\n|---|---|---|---|\n";
  const char* kinds[] = {"logits", "finalfc", "stats"};
  md << "| disjoint mnist |";
  for (int k = 0; k < 3; ++k)
    md << " " << cell_with_ref(agg.get(std::string("disjoint-mnist|sc1|") + kinds[k]),
                               ref::kSc1Disjoint[k])
       << " |";
  md << "\n| mnist+cifar10 |";
  for (int k = 0; k < 3; ++k)
    md << " " << cell_with_ref(agg.get(std::string("mnist-cifar10|sc1|") + kinds[k]),
                               ref::kSc1MnistCifar[k])
       << " |";
  md << "\n";

  md << "\n## UPAN and SC2 (attribution / coordination)\n\n"
     << "| trained on | tested on | logits | logit stats |\n|---|---|---|---|\n";
  for (const auto& row : ref::kUpanRows) {
    const bool self = std::string(row.trained_on) == row.tested_on;
    const std::string base = self ? std::string(row.trained_on) + "|upan|self|"
                                  : std::string(row.trained_on) + "|upan-transfer|" +
                                        row.tested_on + "|";
    md << "| " << row.trained_on << " | " << row.tested_on << " | ";
    auto both = [&](const char* kind, double ref_attrib, double ref_sc2) {
      auto attrib = agg.get(base + kind + "|attrib");
      auto sc2 = agg.get(base + kind + "|sc2");
      if (ref_attrib < 0) {
        md << cell(attrib) << " / " << cell(sc2);
      } else {
        md << cell_with_ref(attrib, ref_attrib) << " / " << cell_with_ref(sc2, ref_sc2);
      }
    };
    both("logits", row.logits_attrib, row.logits_sc2);
    md << " | ";
    both("stats", row.stats_attrib, row.stats_sc2);
    md << " |\n";
  }

  md << "\n## Fast PAN routing (no published reference)\n\n"
     << "| problem | teacher agreement | routing (pool) | routing (test) |\n|---|---|---|---|\n";
  for (const char* mixture : {"disjoint-mnist", "mnist-cifar10"}) {
    md << "| " << mixture << " | "
       << cell(agg.get(std::string(mixture) + "|fpan|teacher-agreement")) << " | "
       << cell(agg.get(std::string(mixture) + "|fpan|routing-pool")) << " | "
       << cell(agg.get(std::string(mixture) + "|fpan|routing-test")) << " |\n";
  }

  write_text_file((fs::path(run_dir) / "report.md").string(), md.str());
}

}  // namespace moeh
