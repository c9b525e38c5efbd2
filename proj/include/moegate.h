/* moegate: data-free mixture-of-experts gating toolkit.
 *
 * C interface over the core library: opaque handles, status codes, and a
 * thread-local error message. All functions return MOE_OK on success; on
 * failure the handle outputs are untouched and moe_last_error() describes
 * the problem for the calling thread.
 *
 * Lifetime rules: every *_free matches exactly one successful *_create/
 * *_train/*_load. A mixture borrows its experts; keep them alive for the
 * mixture's lifetime. Handles are immutable after creation and safe to
 * share across threads (gating calls may lazily build an internal feature
 * cache; that is synchronized internally).
 */
#ifndef MOEGATE_H
#define MOEGATE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum moe_status {
  MOE_OK = 0,
  MOE_ERR_INVALID_ARGUMENT = 1,
  MOE_ERR_IO = 2,
  MOE_ERR_FORMAT = 3,
  MOE_ERR_SHAPE_MISMATCH = 4,
  MOE_ERR_NUMERIC = 5,
  MOE_ERR_UNSUPPORTED = 6,
  MOE_ERR_INTERNAL = 7
} moe_status;

const char* moe_version(void);
const char* moe_status_name(moe_status status);
/* Message for the most recent failure on this thread; empty if none. */
const char* moe_last_error(void);

typedef struct moe_dataset moe_dataset;
typedef struct moe_expert moe_expert;
typedef struct moe_mixture moe_mixture;
typedef struct moe_attribution moe_attribution;
typedef struct moe_pan moe_pan;
typedef struct moe_fpan moe_fpan;

typedef struct moe_train_config {
  float learning_rate;
  int epochs;
  int batch_size;
  uint64_t seed;
  float momentum;
} moe_train_config;

/* lr 0.01, 10 epochs, batch 64, seed 1, momentum 0.9 */
moe_train_config moe_train_config_default(void);

/* ---- datasets ---- */

typedef struct moe_dataset_info {
  size_t count;
  int height, width, channels;
  int class_count;
} moe_dataset_info;

/* IDX image/label pair (big-endian headers, magics 0x803/0x801). */
moe_status moe_dataset_load_idx(const char* images_path, const char* labels_path,
                                const char* name, int class_count, moe_dataset** out);
/* CIFAR-10 binary batches from a directory (data_batch_*.bin / test_batch.bin). */
moe_status moe_dataset_load_cifar10(const char* dir, int train, moe_dataset** out);
/* Keep the listed classes, remapping labels to 0..count-1 in order. */
moe_status moe_dataset_split_classes(const moe_dataset* ds, const int* classes, size_t count,
                                     moe_dataset** out);
moe_status moe_dataset_pad(const moe_dataset* ds, int height, int width, moe_dataset** out);
moe_status moe_dataset_adapt_channels(const moe_dataset* ds, int channels, moe_dataset** out);
/* First `count` samples (whole dataset when count >= size); smoke-scale runs. */
moe_status moe_dataset_take(const moe_dataset* ds, size_t count, moe_dataset** out);
moe_status moe_dataset_info_get(const moe_dataset* ds, moe_dataset_info* out);
void moe_dataset_free(moe_dataset* ds);

/* ---- experts ---- */

typedef struct moe_expert_info {
  int in_channels;
  int class_count;
  double final_accuracy; /* -1 when never evaluated */
  uint64_t seed;
} moe_expert_info;

/* Trains a LeNet5-style expert on its (already padded/adapted) dataset.
 * dataset_tag and the original class list are stored as metadata. */
moe_status moe_expert_train(const moe_dataset* train, const char* dataset_tag,
                            const int* classes, size_t class_count, int global_offset,
                            const moe_train_config* config, moe_expert** out);
moe_status moe_expert_evaluate(const moe_expert* expert, const moe_dataset* test,
                               double* accuracy);
/* Records a measured accuracy into the expert's metadata (persisted). */
moe_status moe_expert_note_accuracy(moe_expert* expert, double accuracy);
moe_status moe_expert_info_get(const moe_expert* expert, moe_expert_info* out);
moe_status moe_expert_save(const moe_expert* expert, const char* path);
moe_status moe_expert_load(const char* path, moe_expert** out);
void moe_expert_free(moe_expert* expert);

/* Finite-difference check of the training gradients on a freshly
 * initialized LeNet5(in_channels, class_count) with random data. */
moe_status moe_gradient_check(int in_channels, int class_count, uint64_t seed, double epsilon,
                              int max_weights, double* max_rel_error);

/* ---- mixtures & gating ---- */

/* Experts in mixture order plus one train and one test set each (native
 * channels; padded to 32x32 internally). Global labels follow the expert
 * order. train_sets may be NULL when only gating over the test side is
 * needed; attribution building and router training then fail cleanly.
 * The mixture borrows the experts and datasets for its lifetime. */
moe_status moe_mixture_create(const moe_expert* const* experts, size_t expert_count,
                              const moe_dataset* const* train_sets,
                              const moe_dataset* const* test_sets, uint64_t seed,
                              moe_mixture** out);
moe_status moe_mixture_sample_count(const moe_mixture* mixture, size_t* out);
void moe_mixture_free(moe_mixture* mixture);

/* Attribution rows for a mixture: expert_index >= 0 builds the rows for
 * that expert's own PAN (its data positive, every other component
 * negative); expert_index < 0 builds the merged rows over every
 * (expert, dataset) pair for a universal PAN. train_split selects the
 * train (1) or test (0) side. */
moe_status moe_mixture_attribution(const moe_mixture* mixture, int expert_index,
                                   const char* feature_kind, int train_split,
                                   moe_attribution** out);

/* stat: argmax | ratio | overall-ratio | q3diff | std */
moe_status moe_gate_naive(const moe_mixture* mixture, const char* stat, double* accuracy);

/* Augmentation specs like "gauss:0.05,0.1", "sharpen:0.5", "hflip",
 * "crop:4". Fills both aggregation accuracies from one shared sweep. */
moe_status moe_gate_augmented(const moe_mixture* mixture, const char* const* aug_specs,
                              size_t spec_count, uint64_t seed, double* mean_accuracy,
                              double* vote_accuracy);

/* ---- attribution datasets & pattern attribution networks ---- */

/* feature kind: logits | finalfc | stats. Standalone builder for ad-hoc
 * negative lists (e.g. training a PAN against unrelated datasets): the
 * positive set uses the expert's stored constants, negatives standardize
 * with stats computed from themselves. Prefer moe_mixture_attribution for
 * mixture-canonical rows. */
moe_status moe_attribution_build(const moe_expert* expert, const moe_dataset* positive,
                                 const moe_dataset* const* negatives, size_t negative_count,
                                 const char* feature_kind, moe_attribution** out);
/* Concatenates attribution sets with matching widths (rows and provenance
 * groups append in order). */
moe_status moe_attribution_merge(const moe_attribution* const* sets, size_t set_count,
                                 moe_attribution** out);
moe_status moe_attribution_rows(const moe_attribution* ds, size_t* out);
moe_status moe_attribution_save(const moe_attribution* ds, const char* path);
moe_status moe_attribution_load(const char* path, moe_attribution** out);
void moe_attribution_free(moe_attribution* ds);

/* owner_expert >= 0 trains a per-expert PAN; -1 trains a universal PAN
 * (adds per-feature standardization from the training rows). */
moe_status moe_pan_train(const moe_attribution* train, const char* feature_kind,
                         int owner_expert, const moe_train_config* config, moe_pan** out);
moe_status moe_pan_evaluate(const moe_pan* pan, const moe_attribution* test, double* accuracy);
moe_status moe_pan_save(const moe_pan* pan, const char* path);
moe_status moe_pan_load(const char* path, moe_pan** out);
void moe_pan_free(moe_pan* pan);

/* SC1: one PAN per expert, in mixture order. */
moe_status moe_gate_sc1(const moe_mixture* mixture, const moe_pan* const* pans, size_t pan_count,
                        double* accuracy);
/* SC2: a single (universal) PAN across all experts. */
moe_status moe_gate_sc2(const moe_mixture* mixture, const moe_pan* upan, double* accuracy);

/* ---- fast PAN (image-to-expert router distilled from SC2) ---- */

/* Distills SC2 decisions over the mixture's TRAIN side into the router. */
moe_status moe_fpan_train(const moe_mixture* mixture, const moe_pan* upan,
                          const moe_train_config* config, moe_fpan** out,
                          double* teacher_agreement, double* routing_accuracy);
/* Routing accuracy (true source expert) over a mixture's samples. */
moe_status moe_fpan_evaluate(const moe_fpan* fpan, const moe_mixture* mixture,
                             double* routing_accuracy);
moe_status moe_fpan_save(const moe_fpan* fpan, const char* path);
moe_status moe_fpan_load(const char* path, moe_fpan** out);
void moe_fpan_free(moe_fpan* fpan);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MOEGATE_H */
