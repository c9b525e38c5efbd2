// moe: command-line front end over libmoegate's C interface.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure during training/evaluation.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "harness/harness.hpp"
#include "moegate.h"

namespace fs = std::filesystem;
using namespace moeh;

namespace {

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? v : fallback;
}

struct CommonArgs {
  std::string data_dir = env_or("MOE_DATA_DIR", "data");
  std::string out_dir = env_or("MOE_OUT_DIR", "out");
  std::string model_dir;
  uint64_t seed = 1;
  uint64_t sample_cap = 0;

  std::string resolved_model_dir() const {
    return model_dir.empty() ? (fs::path(out_dir) / "models").string() : model_dir;
  }
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_seed = true) {
  cmd->add_option("--data-dir", args.data_dir, "dataset root (env MOE_DATA_DIR)");
  cmd->add_option("--out-dir", args.out_dir, "output root (env MOE_OUT_DIR)");
  cmd->add_option("--model-dir", args.model_dir, "checkpoint cache (default <out>/models)");
  cmd->add_option("--sample-cap", args.sample_cap, "use only the first N samples per dataset");
  if (with_seed) cmd->add_option("--seed", args.seed, "experiment seed");
}

Hyper hyper_from_flags(CLI::App* cmd) {
  auto hyper = std::make_shared<Hyper>();
  cmd->add_option("--lr", hyper->learning_rate, "learning rate");
  cmd->add_option("--epochs", hyper->epochs, "training epochs");
  cmd->add_option("--batch", hyper->batch_size, "batch size");
  cmd->add_option("--momentum", hyper->momentum, "SGD momentum");
  // shared_ptr keeps the flags alive until parse time
  static std::vector<std::shared_ptr<Hyper>> keep;
  keep.push_back(hyper);
  return *hyper;  // copied after parse via the lambda captures below
}

ComponentSpec component_from(const std::string& dataset, const std::string& classes) {
  std::string text = dataset;
  if (!classes.empty()) {
    std::string range = classes;
    // accept "0,1,2,3,4" as well as "0-4"
    if (range.find(',') != std::string::npos) {
      std::vector<int> ids;
      std::stringstream ss(range);
      std::string tok;
      while (std::getline(ss, tok, ',')) ids.push_back(std::stoi(tok));
      range = std::to_string(ids.front()) + "-" + std::to_string(ids.back());
    }
    text += ":" + range;
  }
  return ComponentSpec::parse(text);
}

// Experts for one mixture at one seed, through the checkpoint cache.
struct MixtureHandles {
  std::vector<ExpertPtr> experts;
  std::vector<const moe_dataset*> trains;
  std::vector<const moe_dataset*> tests;
  MixturePtr mixture;
  std::vector<ComponentSpec> components;
};

MixtureHandles mixture_for(DataCatalog& data, const CommonArgs& args, const Hyper& hyper,
                           const std::string& mixture_text) {
  MixtureHandles h;
  h.components = parse_mixture(mixture_text);
  int offset = 0;
  for (const ComponentSpec& comp : h.components) {
    h.experts.push_back(
        obtain_expert(data, comp, args.seed, hyper, args.resolved_model_dir(), offset));
    h.trains.push_back(data.component(comp, true));
    const moe_dataset* test = data.component(comp, false);
    h.tests.push_back(test);
    moe_dataset_info info;
    check_status(moe_dataset_info_get(test, &info), "dataset info");
    offset += info.class_count;
  }
  std::vector<const moe_expert*> raw;
  for (auto& e : h.experts) raw.push_back(e.get());
  moe_mixture* mix = nullptr;
  check_status(moe_mixture_create(raw.data(), raw.size(), h.trains.data(), h.tests.data(),
                                  args.seed, &mix),
               "building mixture " + mixture_text);
  h.mixture.reset(mix);
  return h;
}

void print_row(const ResultRow& row) { std::printf("%s\n", csv_line(row).c_str()); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"data-free mixture-of-experts gating toolkit"};
  app.require_subcommand(1);

  try {
    // ---- train-expert ----
    auto* train_cmd = app.add_subcommand("train-expert", "train one expert and cache it");
    CommonArgs train_args;
    add_common(train_cmd, train_args);
    std::string train_dataset, train_classes;
    Hyper train_hyper;
    train_cmd->add_option("--dataset", train_dataset, "dataset tag (mnist|fashion|kmnist|cifar10)")
        ->required();
    train_cmd->add_option("--classes", train_classes, "class list, e.g. 0-4 or 0,1,2,3,4");
    train_cmd->add_option("--lr", train_hyper.learning_rate, "learning rate");
    train_cmd->add_option("--epochs", train_hyper.epochs, "training epochs");
    train_cmd->add_option("--batch", train_hyper.batch_size, "batch size");
    train_cmd->add_option("--momentum", train_hyper.momentum, "SGD momentum");
    train_cmd->callback([&] {
      DataCatalog data(train_args.data_dir, train_args.sample_cap);
      ComponentSpec comp = component_from(train_dataset, train_classes);
      ExpertPtr expert = obtain_expert(data, comp, train_args.seed, train_hyper,
                                       train_args.resolved_model_dir(), 0);
      moe_expert_info info;
      check_status(moe_expert_info_get(expert.get(), &info), "expert info");
      print_row({train_args.seed, comp.name(), "expert", comp.name(), info.final_accuracy});
    });

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    CommonArgs eval_args;
    add_common(eval_cmd, eval_args, /*with_seed=*/false);
    std::string eval_model, eval_dataset;
    eval_cmd->add_option("--model", eval_model, "checkpoint path")->required();
    eval_cmd->add_option("--dataset", eval_dataset, "component, e.g. mnist:0-4")->required();
    eval_cmd->callback([&] {
      DataCatalog data(eval_args.data_dir, eval_args.sample_cap);
      moe_expert* raw = nullptr;
      check_status(moe_expert_load(eval_model.c_str(), &raw), "loading " + eval_model);
      ExpertPtr expert(raw);
      ComponentSpec comp = ComponentSpec::parse(eval_dataset);
      double acc = 0.0;
      check_status(moe_expert_evaluate(expert.get(), data.component(comp, false), &acc),
                   "evaluating");
      print_row({0, comp.name(), "eval", fs::path(eval_model).filename().string(), acc});
    });

    // ---- gate-naive ----
    auto* naive_cmd = app.add_subcommand("gate-naive", "naive concatenation gating");
    CommonArgs naive_args;
    add_common(naive_cmd, naive_args);
    std::string naive_mixture = "disjoint-mnist", naive_stat = "argmax";
    naive_cmd->add_option("--mixture", naive_mixture, "mixture preset or component list");
    naive_cmd->add_option("--stat", naive_stat, "argmax|ratio|overall-ratio|q3diff|std");
    naive_cmd->callback([&] {
      DataCatalog data(naive_args.data_dir, naive_args.sample_cap);
      MixtureHandles mix = mixture_for(data, naive_args, Hyper{}, naive_mixture);
      double acc = 0.0;
      check_status(moe_gate_naive(mix.mixture.get(), naive_stat.c_str(), &acc), "naive gating");
      print_row({naive_args.seed, naive_mixture, "naive", naive_stat, acc});
    });

    // ---- gate-augment ----
    auto* aug_cmd = app.add_subcommand("gate-augment", "multi-pass augmented gating");
    CommonArgs aug_args;
    add_common(aug_cmd, aug_args);
    std::string aug_mixture = "disjoint-mnist", aug_agg = "vote";
    std::vector<std::string> aug_specs;
    aug_cmd->add_option("--mixture", aug_mixture, "mixture preset or component list");
    aug_cmd->add_option("--aug", aug_specs, "augmentation spec (repeatable), e.g. gauss:0.1");
    aug_cmd->add_option("--agg", aug_agg, "mean|vote");
    aug_cmd->callback([&] {
      if (aug_agg != "mean" && aug_agg != "vote")
        throw HarnessError(HarnessError::Kind::Config, "unknown aggregation '" + aug_agg + "'");
      DataCatalog data(aug_args.data_dir, aug_args.sample_cap);
      MixtureHandles mix = mixture_for(data, aug_args, Hyper{}, aug_mixture);
      std::vector<const char*> raw;
      for (const auto& s : aug_specs) raw.push_back(s.c_str());
      double mean_acc = 0.0, vote_acc = 0.0;
      check_status(moe_gate_augmented(mix.mixture.get(), raw.data(), raw.size(), aug_args.seed,
                                      &mean_acc, &vote_acc),
                   "augmented gating");
      std::string detail;
      for (const auto& s : aug_specs) detail += (detail.empty() ? "" : "+") + s;
      print_row({aug_args.seed, aug_mixture, "augment", detail + "|" + aug_agg,
                 aug_agg == "mean" ? mean_acc : vote_acc});
    });

    // ---- train-pan ----
    auto* pan_cmd = app.add_subcommand("train-pan", "train a per-expert PAN");
    CommonArgs pan_args;
    add_common(pan_cmd, pan_args);
    std::string pan_expert, pan_feature = "finalfc", pan_mixture = "disjoint-mnist";
    std::string pan_out, pan_attr_out;
    Hyper pan_hyper;
    pan_cmd->add_option("--mixture", pan_mixture, "mixture the PAN belongs to");
    pan_cmd
        ->add_option("--expert", pan_expert,
                     "which expert: component name (e.g. mnist:0-4) or index")
        ->required();
    pan_cmd->add_option("--feature", pan_feature, "logits|finalfc|stats");
    pan_cmd->add_option("--out", pan_out, "PAN checkpoint output path");
    pan_cmd->add_option("--save-attribution", pan_attr_out, "persist the attribution rows");
    pan_cmd->add_option("--epochs", pan_hyper.epochs, "training epochs");
    pan_cmd->callback([&] {
      DataCatalog data(pan_args.data_dir, pan_args.sample_cap);
      MixtureHandles mix = mixture_for(data, pan_args, Hyper{}, pan_mixture);
      int index = -1;
      for (size_t i = 0; i < mix.components.size(); ++i)
        if (mix.components[i].name() == pan_expert) index = static_cast<int>(i);
      if (index < 0) {
        try {
          index = std::stoi(pan_expert);
        } catch (const std::exception&) {
          throw HarnessError(HarnessError::Kind::Config,
                             "--expert '" + pan_expert + "' is neither a component of " +
                                 pan_mixture + " nor an index");
        }
      }
      moe_attribution* attr = nullptr;
      check_status(
          moe_mixture_attribution(mix.mixture.get(), index, pan_feature.c_str(), 1, &attr),
          "building attribution rows");
      AttributionPtr attr_holder(attr);
      if (!pan_attr_out.empty())
        check_status(moe_attribution_save(attr, pan_attr_out.c_str()), "saving attribution");
      moe_train_config cfg = pan_hyper.to_config(pan_args.seed);
      moe_pan* pan = nullptr;
      check_status(moe_pan_train(attr, pan_feature.c_str(), index, &cfg, &pan), "training PAN");
      PanPtr pan_holder(pan);
      std::string out = pan_out.empty()
                            ? (fs::path(pan_args.resolved_model_dir()) /
                               ("pan_" + pan_feature + "_s" + std::to_string(pan_args.seed) +
                                ".moec"))
                                  .string()
                            : pan_out;
      fs::create_directories(fs::path(out).parent_path());
      check_status(moe_pan_save(pan, out.c_str()), "saving PAN");
      std::fprintf(stderr, "[moe] wrote %s\n", out.c_str());
    });

    // ---- run-sc1 ----
    auto* sc1_cmd = app.add_subcommand("run-sc1", "smart coordinator with one PAN per expert");
    CommonArgs sc1_args;
    add_common(sc1_cmd, sc1_args);
    std::string sc1_mixture = "disjoint-mnist", sc1_feature = "finalfc";
    sc1_cmd->add_option("--mixture", sc1_mixture, "mixture preset or component list");
    sc1_cmd->add_option("--feature", sc1_feature, "logits|finalfc|stats");
    sc1_cmd->callback([&] {
      DataCatalog data(sc1_args.data_dir, sc1_args.sample_cap);
      MixtureHandles mix = mixture_for(data, sc1_args, Hyper{}, sc1_mixture);
      std::vector<PanPtr> pans;
      for (size_t i = 0; i < mix.experts.size(); ++i) {
        moe_attribution* attr = nullptr;
        check_status(moe_mixture_attribution(mix.mixture.get(), static_cast<int>(i),
                                             sc1_feature.c_str(), 1, &attr),
                     "building attribution rows");
        AttributionPtr attr_holder(attr);
        moe_train_config cfg = Hyper{}.to_config(sc1_args.seed);
        moe_pan* pan = nullptr;
        check_status(
            moe_pan_train(attr, sc1_feature.c_str(), static_cast<int>(i), &cfg, &pan),
            "training PAN");
        pans.emplace_back(pan);
      }
      std::vector<const moe_pan*> raw;
      for (auto& p : pans) raw.push_back(p.get());
      double acc = 0.0;
      check_status(moe_gate_sc1(mix.mixture.get(), raw.data(), raw.size(), &acc), "SC1");
      print_row({sc1_args.seed, sc1_mixture, "sc1", sc1_feature, acc});
    });

    // ---- train-upan ----
    auto* upan_cmd = app.add_subcommand("train-upan", "train a universal PAN");
    CommonArgs upan_args;
    add_common(upan_cmd, upan_args);
    std::vector<std::string> upan_mixtures{"disjoint-mnist"};
    std::string upan_feature = "logits", upan_out;
    upan_cmd->add_option("--mixtures", upan_mixtures, "training mixtures (repeatable)");
    upan_cmd->add_option("--feature", upan_feature, "logits|stats (width-uniform kinds)");
    upan_cmd->add_option("--out", upan_out, "UPAN checkpoint output path");
    upan_cmd->callback([&] {
      DataCatalog data(upan_args.data_dir, upan_args.sample_cap);
      std::vector<AttributionPtr> parts;
      std::vector<const moe_attribution*> raw_parts;
      std::vector<MixtureHandles> keep;
      for (const auto& mtext : upan_mixtures) {
        MixtureHandles mix = mixture_for(data, upan_args, Hyper{}, mtext);
        moe_attribution* merged = nullptr;
        check_status(
            moe_mixture_attribution(mix.mixture.get(), -1, upan_feature.c_str(), 1, &merged),
            "building merged rows for " + mtext);
        parts.emplace_back(merged);
        raw_parts.push_back(merged);
        keep.push_back(std::move(mix));
      }
      moe_attribution* all = nullptr;
      check_status(moe_attribution_merge(raw_parts.data(), raw_parts.size(), &all),
                   "merging attribution sets");
      AttributionPtr all_holder(all);
      moe_train_config cfg = Hyper{}.to_config(upan_args.seed);
      moe_pan* upan = nullptr;
      check_status(moe_pan_train(all, upan_feature.c_str(), -1, &cfg, &upan), "training UPAN");
      PanPtr upan_holder(upan);
      std::string out = upan_out.empty()
                            ? (fs::path(upan_args.resolved_model_dir()) /
                               ("upan_" + upan_feature + "_s" + std::to_string(upan_args.seed) +
                                ".moec"))
                                  .string()
                            : upan_out;
      fs::create_directories(fs::path(out).parent_path());
      check_status(moe_pan_save(upan, out.c_str()), "saving UPAN");
      std::fprintf(stderr, "[moe] wrote %s\n", out.c_str());
    });

    // ---- run-sc2 ----
    auto* sc2_cmd = app.add_subcommand("run-sc2", "smart coordinator with a universal PAN");
    CommonArgs sc2_args;
    add_common(sc2_cmd, sc2_args);
    std::string sc2_upan, sc2_mixture = "disjoint-mnist";
    sc2_cmd->add_option("--upan", sc2_upan, "UPAN checkpoint")->required();
    sc2_cmd->add_option("--mixture", sc2_mixture, "mixture to coordinate");
    sc2_cmd->callback([&] {
      DataCatalog data(sc2_args.data_dir, sc2_args.sample_cap);
      MixtureHandles mix = mixture_for(data, sc2_args, Hyper{}, sc2_mixture);
      moe_pan* raw = nullptr;
      check_status(moe_pan_load(sc2_upan.c_str(), &raw), "loading " + sc2_upan);
      PanPtr upan(raw);
      double acc = 0.0;
      check_status(moe_gate_sc2(mix.mixture.get(), upan.get(), &acc), "SC2");
      print_row({sc2_args.seed, sc2_mixture, "sc2", fs::path(sc2_upan).stem().string(), acc});
    });

    // ---- train-fpan ----
    auto* fpan_cmd = app.add_subcommand("train-fpan", "distill SC2 into an image router");
    CommonArgs fpan_args;
    add_common(fpan_cmd, fpan_args);
    std::string fpan_upan, fpan_pool = "disjoint-mnist", fpan_out;
    Hyper fpan_hyper;
    fpan_cmd->add_option("--upan", fpan_upan, "UPAN checkpoint (the teacher)")->required();
    fpan_cmd->add_option("--pool", fpan_pool, "mixture whose train sets form the pool");
    fpan_cmd->add_option("--out", fpan_out, "router checkpoint output path");
    fpan_cmd->add_option("--epochs", fpan_hyper.epochs, "training epochs");
    fpan_cmd->callback([&] {
      DataCatalog data(fpan_args.data_dir, fpan_args.sample_cap);
      MixtureHandles mix = mixture_for(data, fpan_args, Hyper{}, fpan_pool);
      moe_pan* raw_upan = nullptr;
      check_status(moe_pan_load(fpan_upan.c_str(), &raw_upan), "loading " + fpan_upan);
      PanPtr upan(raw_upan);
      moe_train_config cfg = fpan_hyper.to_config(fpan_args.seed);
      moe_fpan* fpan = nullptr;
      double agreement = 0.0, routing = 0.0;
      check_status(
          moe_fpan_train(mix.mixture.get(), upan.get(), &cfg, &fpan, &agreement, &routing),
          "training FPAN");
      FpanPtr fpan_holder(fpan);
      std::string out = fpan_out.empty()
                            ? (fs::path(fpan_args.resolved_model_dir()) /
                               ("fpan_s" + std::to_string(fpan_args.seed) + ".moec"))
                                  .string()
                            : fpan_out;
      fs::create_directories(fs::path(out).parent_path());
      check_status(moe_fpan_save(fpan, out.c_str()), "saving FPAN");
      print_row({fpan_args.seed, fpan_pool, "fpan", "teacher-agreement", agreement});
      print_row({fpan_args.seed, fpan_pool, "fpan", "routing-pool", routing});
    });

    // ---- report ----
    auto* report_cmd = app.add_subcommand("report", "regenerate report.md for a run directory");
    std::string report_run;
    report_cmd->add_option("--run", report_run, "run directory (holds aggregate.json)")
        ->required();
    report_cmd->callback([&] { write_report(report_run); });

    // ---- reproduce-all ----
    auto* all_cmd = app.add_subcommand("reproduce-all", "full seeded experiment sweep");
    CommonArgs all_args;
    add_common(all_cmd, all_args, /*with_seed=*/false);
    int all_seed_count = 3;
    std::vector<std::string> all_mixtures{"disjoint-mnist", "mnist-cifar10"};
    std::vector<std::string> all_methods{"experts", "naive",    "augment", "pan",
                                         "sc1",     "upan-sc2", "fpan"};
    std::string all_config_path;
    int all_jobs = 1;
    all_cmd->add_option("--seeds", all_seed_count, "number of seeds (1..N)");
    all_cmd->add_option("--mixtures", all_mixtures, "mixtures to run");
    all_cmd->add_option("--methods", all_methods, "method groups");
    all_cmd->add_option("--config", all_config_path, "JSON config file (overrides flags)");
    all_cmd->add_option("--jobs", all_jobs, "parallel seed workers");
    all_cmd->callback([&] {
      ExperimentConfig config;
      if (!all_config_path.empty()) {
        std::ifstream is(all_config_path);
        if (!is.is_open())
          throw HarnessError(HarnessError::Kind::Config, "cannot open " + all_config_path);
        nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
        if (j.is_discarded())
          throw HarnessError(HarnessError::Kind::Config, "bad JSON in " + all_config_path);
        config = ExperimentConfig::from_json(j);
        if (config.data_dir.empty()) config.data_dir = all_args.data_dir;
        if (config.out_dir.empty()) config.out_dir = all_args.out_dir;
      } else {
        config.seeds.clear();
        for (int s = 1; s <= all_seed_count; ++s) config.seeds.push_back(s);
        config.data_dir = all_args.data_dir;
        config.out_dir = all_args.out_dir;
        config.model_dir = all_args.model_dir;
        config.mixtures = all_mixtures;
        config.methods = all_methods;
        config.jobs = all_jobs;
        config.sample_cap = all_args.sample_cap;
      }
      std::string run_dir = run_experiment(config);
      std::printf("%s\n", run_dir.c_str());
    });

    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  } catch (const HarnessError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
