#include "moegate.h"

#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/gradcheck.hpp"
#include "core/rng.hpp"
#include "data/dataset.hpp"
#include "data/mixture.hpp"
#include "experts/checkpoint.hpp"
#include "experts/expert.hpp"
#include "gating/augment.hpp"
#include "gating/naive.hpp"
#include "gating/pan.hpp"
#include "gating/upan.hpp"

struct moe_dataset {
  moe::ImageDataset ds;
};

struct moe_expert {
  moe::ExpertModel model;
};

struct moe_mixture {
  std::vector<const moe::ExpertModel*> experts;
  std::vector<const moe::ImageDataset*> train_sets;  // may be empty
  std::vector<const moe::ImageDataset*> test_sets;
  moe::MixtureSpec spec;
  uint64_t seed = 0;
  moe::MixedTestSet mixed;
  mutable std::mutex mu;
  mutable std::optional<moe::MixedTestSet> train_pool;
  mutable std::optional<moe::MixtureTrace> trace;

  const moe::MixtureTrace& cached_trace() const {
    std::lock_guard<std::mutex> lock(mu);
    if (!trace) trace = moe::trace_mixture(experts, mixed);
    return *trace;
  }

  const moe::MixedTestSet& cached_train_pool() const {
    moe::require(!train_sets.empty(), moe::ErrorCode::InvalidArgument,
                 "mixture was created without train sets");
    std::lock_guard<std::mutex> lock(mu);
    if (!train_pool) train_pool = moe::build_mixed_testset(spec, train_sets, seed);
    return *train_pool;
  }
};

struct moe_attribution {
  moe::AttributionDataset ds;
};

struct moe_pan {
  moe::PANModel pan;
};

struct moe_fpan {
  moe::FpanModel model;
};

namespace {

thread_local std::string g_last_error;

moe_status to_status(moe::ErrorCode code) {
  switch (code) {
    case moe::ErrorCode::InvalidArgument: return MOE_ERR_INVALID_ARGUMENT;
    case moe::ErrorCode::Io: return MOE_ERR_IO;
    case moe::ErrorCode::Format: return MOE_ERR_FORMAT;
    case moe::ErrorCode::ShapeMismatch: return MOE_ERR_SHAPE_MISMATCH;
    case moe::ErrorCode::Numeric: return MOE_ERR_NUMERIC;
    case moe::ErrorCode::Unsupported: return MOE_ERR_UNSUPPORTED;
  }
  return MOE_ERR_INTERNAL;
}

template <class Fn>
moe_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return MOE_OK;
  } catch (const moe::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MOE_ERR_INTERNAL;
  }
}

void check_arg(bool ok, const char* message) {
  moe::require(ok, moe::ErrorCode::InvalidArgument, message);
}

}  // namespace

extern "C" {

const char* moe_version(void) { return "0.1.0"; }

const char* moe_status_name(moe_status status) {
  switch (status) {
    case MOE_OK: return "ok";
    case MOE_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case MOE_ERR_IO: return "io";
    case MOE_ERR_FORMAT: return "format";
    case MOE_ERR_SHAPE_MISMATCH: return "shape_mismatch";
    case MOE_ERR_NUMERIC: return "numeric";
    case MOE_ERR_UNSUPPORTED: return "unsupported";
    case MOE_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* moe_last_error(void) { return g_last_error.c_str(); }

moe_train_config moe_train_config_default(void) {
  moe::TrainConfig d;
  return {d.learning_rate, d.epochs, d.batch_size, d.seed, d.momentum};
}

/* ---- datasets ---- */

moe_status moe_dataset_load_idx(const char* images_path, const char* labels_path,
                                const char* name, int class_count, moe_dataset** out) {
  return guarded([&] {
    check_arg(images_path && labels_path && name && out, "null argument");
    auto* h = new moe_dataset{moe::load_idx(images_path, labels_path, name, class_count)};
    *out = h;
  });
}

moe_status moe_dataset_load_cifar10(const char* dir, int train, moe_dataset** out) {
  return guarded([&] {
    check_arg(dir && out, "null argument");
    *out = new moe_dataset{moe::load_cifar10(dir, train != 0)};
  });
}

moe_status moe_dataset_split_classes(const moe_dataset* ds, const int* classes, size_t count,
                                     moe_dataset** out) {
  return guarded([&] {
    check_arg(ds && classes && out, "null argument");
    *out = new moe_dataset{
        moe::split_by_class(ds->ds, std::vector<int>(classes, classes + count))};
  });
}

moe_status moe_dataset_pad(const moe_dataset* ds, int height, int width, moe_dataset** out) {
  return guarded([&] {
    check_arg(ds && out, "null argument");
    *out = new moe_dataset{moe::pad_to(ds->ds, height, width)};
  });
}

moe_status moe_dataset_adapt_channels(const moe_dataset* ds, int channels, moe_dataset** out) {
  return guarded([&] {
    check_arg(ds && out, "null argument");
    *out = new moe_dataset{moe::adapt_channels(ds->ds, channels)};
  });
}

moe_status moe_dataset_take(const moe_dataset* ds, size_t count, moe_dataset** out) {
  return guarded([&] {
    check_arg(ds && out, "null argument");
    check_arg(count > 0, "cannot take zero samples");
    auto h = std::make_unique<moe_dataset>(*ds);
    if (count < h->ds.size()) {
      h->ds.labels.resize(count);
      h->ds.pixels.resize(count * h->ds.image_bytes());
    }
    *out = h.release();
  });
}

moe_status moe_dataset_info_get(const moe_dataset* ds, moe_dataset_info* out) {
  return guarded([&] {
    check_arg(ds && out, "null argument");
    *out = {ds->ds.size(), ds->ds.h, ds->ds.w, ds->ds.c, ds->ds.class_count};
  });
}

void moe_dataset_free(moe_dataset* ds) { delete ds; }

/* ---- experts ---- */

moe_status moe_expert_train(const moe_dataset* train, const char* dataset_tag,
                            const int* classes, size_t class_count, int global_offset,
                            const moe_train_config* config, moe_expert** out) {
  return guarded([&] {
    check_arg(train && dataset_tag && config && out, "null argument");
    moe::TrainConfig cfg{config->learning_rate, config->epochs, config->batch_size, config->seed,
                         config->momentum};
    auto h = std::make_unique<moe_expert>(
        moe_expert{moe::build_lenet5(train->ds.c, train->ds.class_count)});
    h->model.dataset_tag = dataset_tag;
    if (classes != nullptr) h->model.classes.assign(classes, classes + class_count);
    h->model.global_offset = global_offset;
    moe::train_expert(h->model, train->ds, cfg);
    *out = h.release();
  });
}

moe_status moe_expert_evaluate(const moe_expert* expert, const moe_dataset* test,
                               double* accuracy) {
  return guarded([&] {
    check_arg(expert && test && accuracy, "null argument");
    *accuracy = moe::evaluate(expert->model, test->ds);
  });
}

moe_status moe_expert_note_accuracy(moe_expert* expert, double accuracy) {
  return guarded([&] {
    check_arg(expert != nullptr, "null argument");
    expert->model.final_accuracy = accuracy;
  });
}

moe_status moe_expert_info_get(const moe_expert* expert, moe_expert_info* out) {
  return guarded([&] {
    check_arg(expert && out, "null argument");
    *out = {expert->model.in_channels, expert->model.class_count, expert->model.final_accuracy,
            expert->model.config.seed};
  });
}

moe_status moe_expert_save(const moe_expert* expert, const char* path) {
  return guarded([&] {
    check_arg(expert && path, "null argument");
    moe::save_checkpoint(expert->model, path);
  });
}

moe_status moe_expert_load(const char* path, moe_expert** out) {
  return guarded([&] {
    check_arg(path && out, "null argument");
    *out = new moe_expert{moe::load_checkpoint(path)};
  });
}

void moe_expert_free(moe_expert* expert) { delete expert; }

moe_status moe_gradient_check(int in_channels, int class_count, uint64_t seed, double epsilon,
                              int max_weights, double* max_rel_error) {
  return guarded([&] {
    check_arg(max_rel_error != nullptr, "null argument");
    moe::ExpertModel model = moe::build_lenet5(in_channels, class_count);
    model.net.init_weights(seed);
    moe::Rng rng(moe::mix_seed(seed, 0xfd));
    moe::Tensor batch = moe::Tensor::zeros({4, in_channels, 32, 32});
    for (float& v : batch.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    std::vector<int> labels(4);
    for (int& l : labels) l = static_cast<int>(rng.below(class_count));
    *max_rel_error =
        moe::gradient_check(model.net, batch, labels, epsilon, max_weights, seed).max_rel_error;
  });
}

/* ---- mixtures & gating ---- */

moe_status moe_mixture_create(const moe_expert* const* experts, size_t expert_count,
                              const moe_dataset* const* train_sets,
                              const moe_dataset* const* test_sets, uint64_t seed,
                              moe_mixture** out) {
  return guarded([&] {
    check_arg(experts && test_sets && out, "null argument");
    check_arg(expert_count >= 1, "a mixture needs at least one expert");
    std::vector<int> class_counts;
    std::vector<std::string> tags;
    std::vector<const moe::ImageDataset*> tests;
    for (size_t i = 0; i < expert_count; ++i) {
      check_arg(experts[i] && test_sets[i], "null expert or test set");
      check_arg(train_sets == nullptr || train_sets[i] != nullptr, "null train set");
      class_counts.push_back(experts[i]->model.class_count);
      tags.push_back(experts[i]->model.dataset_tag);
      tests.push_back(&test_sets[i]->ds);
    }
    moe::MixtureSpec spec = moe::make_mixture_spec(class_counts, tags);
    auto h = std::make_unique<moe_mixture>();
    h->spec = spec;
    h->seed = seed;
    h->mixed = moe::build_mixed_testset(spec, tests, seed);
    for (size_t i = 0; i < expert_count; ++i) {
      h->experts.push_back(&experts[i]->model);
      h->test_sets.push_back(&test_sets[i]->ds);
      if (train_sets != nullptr) h->train_sets.push_back(&train_sets[i]->ds);
    }
    *out = h.release();
  });
}

moe_status moe_mixture_attribution(const moe_mixture* mixture, int expert_index,
                                   const char* feature_kind, int train_split,
                                   moe_attribution** out) {
  return guarded([&] {
    check_arg(mixture && feature_kind && out, "null argument");
    moe::FeatureKind kind = moe::feature_kind_from_string(feature_kind);
    const size_t n = mixture->experts.size();
    moe::require(train_split == 0 || !mixture->train_sets.empty(),
                 moe::ErrorCode::InvalidArgument, "mixture was created without train sets");
    check_arg(expert_index < static_cast<int>(n), "expert index out of range");

    std::vector<moe::ImageDataset> sets;
    sets.reserve(n);
    for (size_t i = 0; i < n; ++i) {
      const moe::ImageDataset& src =
          train_split ? *mixture->train_sets[i] : *mixture->test_sets[i];
      sets.push_back(moe::pad_to(src, moe::kExpertInputSize, moe::kExpertInputSize));
    }

    moe::AttributionDataset ds;
    if (expert_index < 0) {
      std::vector<const moe::ImageDataset*> raw;
      for (const auto& s : sets) raw.push_back(&s);
      ds = moe::build_upan_dataset(mixture->experts, raw, kind);
    } else {
      const moe::ExpertModel& expert = *mixture->experts[expert_index];
      for (size_t d = 0; d < n; ++d) {
        moe::append_attribution_rows(ds, expert, expert_index, sets[d],
                                     mixture->experts[d]->norm,
                                     static_cast<int>(d) == expert_index, kind);
      }
      ds.validate();
    }
    *out = new moe_attribution{std::move(ds)};
  });
}

moe_status moe_mixture_sample_count(const moe_mixture* mixture, size_t* out) {
  return guarded([&] {
    check_arg(mixture && out, "null argument");
    *out = mixture->mixed.size();
  });
}

void moe_mixture_free(moe_mixture* mixture) { delete mixture; }

moe_status moe_gate_naive(const moe_mixture* mixture, const char* stat, double* accuracy) {
  return guarded([&] {
    check_arg(mixture && stat && accuracy, "null argument");
    *accuracy = moe::evaluate_naive(mixture->cached_trace(), mixture->mixed,
                                    moe::naive_stat_from_string(stat));
  });
}

moe_status moe_gate_augmented(const moe_mixture* mixture, const char* const* aug_specs,
                              size_t spec_count, uint64_t seed, double* mean_accuracy,
                              double* vote_accuracy) {
  return guarded([&] {
    check_arg(mixture && mean_accuracy && vote_accuracy, "null argument");
    check_arg(aug_specs != nullptr || spec_count == 0, "null augmentation list");
    std::vector<moe::AugmentationSpec> specs;
    for (size_t i = 0; i < spec_count; ++i)
      specs.push_back(moe::AugmentationSpec::parse(aug_specs[i]));
    moe::AugmentedAccuracy acc =
        moe::evaluate_augmented(mixture->experts, mixture->mixed, specs, seed);
    *mean_accuracy = acc.mean;
    *vote_accuracy = acc.vote;
  });
}

/* ---- attribution & PANs ---- */

moe_status moe_attribution_build(const moe_expert* expert, const moe_dataset* positive,
                                 const moe_dataset* const* negatives, size_t negative_count,
                                 const char* feature_kind, moe_attribution** out) {
  return guarded([&] {
    check_arg(expert && positive && feature_kind && out, "null argument");
    check_arg(negatives != nullptr || negative_count == 0, "null negative list");
    moe::FeatureKind kind = moe::feature_kind_from_string(feature_kind);
    moe::ImageDataset pos =
        moe::pad_to(positive->ds, moe::kExpertInputSize, moe::kExpertInputSize);
    std::vector<moe::ImageDataset> padded;
    padded.reserve(negative_count);
    std::vector<const moe::ImageDataset*> negs;
    for (size_t i = 0; i < negative_count; ++i) {
      check_arg(negatives[i] != nullptr, "null negative dataset");
      padded.push_back(
          moe::pad_to(negatives[i]->ds, moe::kExpertInputSize, moe::kExpertInputSize));
      negs.push_back(&padded.back());
    }
    *out = new moe_attribution{
        moe::build_attribution_dataset(expert->model, pos, negs, kind)};
  });
}

moe_status moe_attribution_merge(const moe_attribution* const* sets, size_t set_count,
                                 moe_attribution** out) {
  return guarded([&] {
    check_arg(sets && out, "null argument");
    check_arg(set_count >= 1, "nothing to merge");
    auto merged = std::make_unique<moe_attribution>();
    for (size_t i = 0; i < set_count; ++i) {
      check_arg(sets[i] != nullptr, "null attribution set");
      const moe::AttributionDataset& src = sets[i]->ds;
      if (i == 0) {
        merged->ds.width = src.width;
      } else {
        moe::require(src.width == merged->ds.width, moe::ErrorCode::ShapeMismatch,
                     "attribution width " + std::to_string(src.width) + " != " +
                         std::to_string(merged->ds.width) + "; sets cannot be merged");
      }
      merged->ds.features.insert(merged->ds.features.end(), src.features.begin(),
                                 src.features.end());
      merged->ds.labels.insert(merged->ds.labels.end(), src.labels.begin(), src.labels.end());
      merged->ds.groups.insert(merged->ds.groups.end(), src.groups.begin(), src.groups.end());
    }
    merged->ds.validate();
    *out = merged.release();
  });
}

moe_status moe_attribution_rows(const moe_attribution* ds, size_t* out) {
  return guarded([&] {
    check_arg(ds && out, "null argument");
    *out = ds->ds.rows();
  });
}

moe_status moe_attribution_save(const moe_attribution* ds, const char* path) {
  return guarded([&] {
    check_arg(ds && path, "null argument");
    moe::save_attribution(ds->ds, path);
  });
}

moe_status moe_attribution_load(const char* path, moe_attribution** out) {
  return guarded([&] {
    check_arg(path && out, "null argument");
    *out = new moe_attribution{moe::load_attribution(path)};
  });
}

void moe_attribution_free(moe_attribution* ds) { delete ds; }

moe_status moe_pan_train(const moe_attribution* train, const char* feature_kind,
                         int owner_expert, const moe_train_config* config, moe_pan** out) {
  return guarded([&] {
    check_arg(train && feature_kind && config && out, "null argument");
    moe::TrainConfig cfg{config->learning_rate, config->epochs, config->batch_size, config->seed,
                         config->momentum};
    moe::FeatureKind kind = moe::feature_kind_from_string(feature_kind);
    *out = new moe_pan{owner_expert < 0 ? moe::train_upan(train->ds, kind, cfg)
                                        : moe::train_pan(train->ds, kind, cfg, owner_expert)};
  });
}

moe_status moe_pan_evaluate(const moe_pan* pan, const moe_attribution* test, double* accuracy) {
  return guarded([&] {
    check_arg(pan && test && accuracy, "null argument");
    *accuracy = moe::evaluate_pan(pan->pan, test->ds);
  });
}

moe_status moe_pan_save(const moe_pan* pan, const char* path) {
  return guarded([&] {
    check_arg(pan && path, "null argument");
    moe::save_pan(pan->pan, path);
  });
}

moe_status moe_pan_load(const char* path, moe_pan** out) {
  return guarded([&] {
    check_arg(path && out, "null argument");
    *out = new moe_pan{moe::load_pan(path)};
  });
}

void moe_pan_free(moe_pan* pan) { delete pan; }

moe_status moe_gate_sc1(const moe_mixture* mixture, const moe_pan* const* pans, size_t pan_count,
                        double* accuracy) {
  return guarded([&] {
    check_arg(mixture && pans && accuracy, "null argument");
    check_arg(pan_count == mixture->experts.size(), "one PAN per expert required");
    std::vector<const moe::PANModel*> p;
    for (size_t i = 0; i < pan_count; ++i) {
      check_arg(pans[i] != nullptr, "null PAN");
      p.push_back(&pans[i]->pan);
    }
    *accuracy = moe::evaluate_sc1(p, mixture->cached_trace(), mixture->mixed);
  });
}

moe_status moe_gate_sc2(const moe_mixture* mixture, const moe_pan* upan, double* accuracy) {
  return guarded([&] {
    check_arg(mixture && upan && accuracy, "null argument");
    *accuracy = moe::evaluate_sc2(upan->pan, mixture->cached_trace(), mixture->mixed);
  });
}

/* ---- fast PAN ---- */

moe_status moe_fpan_train(const moe_mixture* mixture, const moe_pan* upan,
                          const moe_train_config* config, moe_fpan** out,
                          double* teacher_agreement, double* routing_accuracy) {
  return guarded([&] {
    check_arg(mixture && upan && config && out, "null argument");
    moe::TrainConfig cfg{config->learning_rate, config->epochs, config->batch_size, config->seed,
                         config->momentum};
    moe::FpanResult r = moe::train_fpan(upan->pan, mixture->experts,
                                        mixture->cached_train_pool(), cfg);
    if (teacher_agreement != nullptr) *teacher_agreement = r.teacher_agreement;
    if (routing_accuracy != nullptr) *routing_accuracy = r.routing_accuracy;
    *out = new moe_fpan{std::move(r.model)};
  });
}

moe_status moe_fpan_evaluate(const moe_fpan* fpan, const moe_mixture* mixture,
                             double* routing_accuracy) {
  return guarded([&] {
    check_arg(fpan && mixture && routing_accuracy, "null argument");
    *routing_accuracy = moe::evaluate_fpan_routing(fpan->model, mixture->mixed);
  });
}

moe_status moe_fpan_save(const moe_fpan* fpan, const char* path) {
  return guarded([&] {
    check_arg(fpan && path, "null argument");
    moe::save_fpan(fpan->model, path);
  });
}

moe_status moe_fpan_load(const char* path, moe_fpan** out) {
  return guarded([&] {
    check_arg(path && out, "null argument");
    *out = new moe_fpan{moe::load_fpan(path)};
  });
}

void moe_fpan_free(moe_fpan* fpan) { delete fpan; }

} /* extern "C" */
