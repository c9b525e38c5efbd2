#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace moe {

// Images are stored as uint8 planes (CHW per sample, row-major). Instances
// are immutable after load and safe to share across threads.
struct ImageDataset {
  std::string name;
  int class_count = 0;
  int h = 0, w = 0, c = 0;
  std::vector<uint8_t> pixels;  // size() * c * h * w
  std::vector<uint8_t> labels;

  size_t size() const { return labels.size(); }
  size_t image_bytes() const { return static_cast<size_t>(c) * h * w; }
  const uint8_t* image(size_t i) const { return pixels.data() + i * image_bytes(); }
  uint8_t* image(size_t i) { return pixels.data() + i * image_bytes(); }

  void validate() const;
  std::vector<size_t> label_histogram() const;
};

// IDX (big-endian) image/label pair, as distributed for the MNIST family.
ImageDataset load_idx(const std::string& images_path, const std::string& labels_path,
                      const std::string& name, int class_count = 10);

// The five data_batch_*.bin files (train) or test_batch.bin, 3073-byte
// records with plane order R,G,B.
ImageDataset load_cifar10(const std::string& dir, bool train);

// Keeps samples whose label appears in `classes`, remapping labels to
// 0..classes.size()-1 in the given order.
ImageDataset split_by_class(const ImageDataset& ds, const std::vector<int>& classes);

// ITU-R 601 luminance, rounded to nearest integer.
uint8_t luminance(uint8_t r, uint8_t g, uint8_t b);

// 1->3 replicates the plane, 3->1 grayscales; no-op when already matching.
ImageDataset adapt_channels(const ImageDataset& ds, int target_channels);

// Centered zero padding up to (H, W).
ImageDataset pad_to(const ImageDataset& ds, int target_h, int target_w);

// Canonical uint8 -> [0,1] conversion used by every pipeline stage.
inline float u8_to_unit(uint8_t v) { return v * (1.0f / 255.0f); }

struct NormStats {
  std::vector<float> mean, stddev;  // per channel, x/255 scale
};

// Per-channel mean/std of x/255 over the whole dataset.
NormStats compute_norm_stats(const ImageDataset& ds);

// (x/255 - mean) / std as a float tensor [n, c, h, w].
Tensor normalize(const ImageDataset& ds, const NormStats& stats);

// Same normalization for a row subset, writing into `out` ([k, c, h, w]).
void fill_normalized_batch(const ImageDataset& ds, const std::vector<int>& indices,
                           const NormStats& stats, Tensor& out);

}  // namespace moe
