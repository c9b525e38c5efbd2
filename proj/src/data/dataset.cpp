#include "data/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "core/error.hpp"

namespace moe {

namespace {

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;
constexpr size_t kCifarRecord = 3073;
constexpr size_t kCifarBatch = 10000;

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  require(f.is_open(), ErrorCode::Io, "cannot open " + path);
  std::streamsize size = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<uint8_t> buf(static_cast<size_t>(size));
  require(size == 0 || static_cast<bool>(f.read(reinterpret_cast<char*>(buf.data()), size)),
          ErrorCode::Io, "failed to read " + path);
  return buf;
}

uint32_t be32(const std::vector<uint8_t>& buf, size_t off, const std::string& path) {
  require(off + 4 <= buf.size(), ErrorCode::Format,
          path + " truncated at offset " + std::to_string(off));
  return (static_cast<uint32_t>(buf[off]) << 24) | (static_cast<uint32_t>(buf[off + 1]) << 16) |
         (static_cast<uint32_t>(buf[off + 2]) << 8) | static_cast<uint32_t>(buf[off + 3]);
}

char hex_digit(uint32_t v) { return "0123456789abcdef"[v & 0xf]; }

std::string hex32(uint32_t v) {
  std::string s = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) s += hex_digit(v >> shift);
  return s;
}

}  // namespace

void ImageDataset::validate() const {
  require(c == 1 || c == 3, ErrorCode::InvalidArgument,
          name + ": channel count must be 1 or 3, got " + std::to_string(c));
  require(class_count > 0, ErrorCode::InvalidArgument, name + ": class_count must be positive");
  require(pixels.size() == labels.size() * image_bytes(), ErrorCode::ShapeMismatch,
          name + ": pixel buffer does not match image count");
  for (uint8_t l : labels) {
    require(l < class_count, ErrorCode::InvalidArgument,
            name + ": label " + std::to_string(l) + " >= class_count " +
                std::to_string(class_count));
  }
}

std::vector<size_t> ImageDataset::label_histogram() const {
  std::vector<size_t> hist(class_count, 0);
  for (uint8_t l : labels) ++hist[l];
  return hist;
}

ImageDataset load_idx(const std::string& images_path, const std::string& labels_path,
                      const std::string& name, int class_count) {
  auto ibuf = read_file(images_path);
  auto lbuf = read_file(labels_path);

  uint32_t imagic = be32(ibuf, 0, images_path);
  require(imagic == kIdxImagesMagic, ErrorCode::Format,
          images_path + ": bad magic " + hex32(imagic) + ", expected " + hex32(kIdxImagesMagic));
  uint32_t lmagic = be32(lbuf, 0, labels_path);
  require(lmagic == kIdxLabelsMagic, ErrorCode::Format,
          labels_path + ": bad magic " + hex32(lmagic) + ", expected " + hex32(kIdxLabelsMagic));

  uint32_t n_images = be32(ibuf, 4, images_path);
  uint32_t h = be32(ibuf, 8, images_path);
  uint32_t w = be32(ibuf, 12, images_path);
  uint32_t n_labels = be32(lbuf, 4, labels_path);
  require(n_images == n_labels, ErrorCode::Format,
          images_path + " holds " + std::to_string(n_images) + " images but " + labels_path +
              " holds " + std::to_string(n_labels) + " labels");
  size_t expect_pixels = static_cast<size_t>(n_images) * h * w;
  require(ibuf.size() == 16 + expect_pixels, ErrorCode::Format,
          images_path + ": size " + std::to_string(ibuf.size()) + " != header-implied " +
              std::to_string(16 + expect_pixels));
  require(lbuf.size() == 8 + n_labels, ErrorCode::Format,
          labels_path + ": size " + std::to_string(lbuf.size()) + " != header-implied " +
              std::to_string(8 + n_labels));

  ImageDataset ds;
  ds.name = name;
  ds.class_count = class_count;
  ds.h = static_cast<int>(h);
  ds.w = static_cast<int>(w);
  ds.c = 1;
  ds.pixels.assign(ibuf.begin() + 16, ibuf.end());
  ds.labels.assign(lbuf.begin() + 8, lbuf.end());
  ds.validate();
  return ds;
}

ImageDataset load_cifar10(const std::string& dir, bool train) {
  std::vector<std::string> files;
  if (train) {
    for (int b = 1; b <= 5; ++b) files.push_back(dir + "/data_batch_" + std::to_string(b) + ".bin");
  } else {
    files.push_back(dir + "/test_batch.bin");
  }
  ImageDataset ds;
  ds.name = "cifar10";
  ds.class_count = 10;
  ds.h = 32;
  ds.w = 32;
  ds.c = 3;
  for (const std::string& path : files) {
    auto buf = read_file(path);
    require(buf.size() == kCifarRecord * kCifarBatch, ErrorCode::Format,
            path + ": size " + std::to_string(buf.size()) + " != expected " +
                std::to_string(kCifarRecord * kCifarBatch));
    for (size_t r = 0; r < kCifarBatch; ++r) {
      const uint8_t* rec = buf.data() + r * kCifarRecord;
      ds.labels.push_back(rec[0]);
      ds.pixels.insert(ds.pixels.end(), rec + 1, rec + kCifarRecord);
    }
  }
  ds.validate();
  return ds;
}

ImageDataset split_by_class(const ImageDataset& ds, const std::vector<int>& classes) {
  require(!classes.empty(), ErrorCode::InvalidArgument, "class list is empty");
  std::vector<int> remap(ds.class_count, -1);
  for (size_t i = 0; i < classes.size(); ++i) {
    require(classes[i] >= 0 && classes[i] < ds.class_count, ErrorCode::InvalidArgument,
            "class " + std::to_string(classes[i]) + " out of range for " + ds.name);
    require(remap[classes[i]] == -1, ErrorCode::InvalidArgument,
            "duplicate class " + std::to_string(classes[i]));
    remap[classes[i]] = static_cast<int>(i);
  }
  ImageDataset out;
  out.name = ds.name;
  out.class_count = static_cast<int>(classes.size());
  out.h = ds.h;
  out.w = ds.w;
  out.c = ds.c;
  for (size_t i = 0; i < ds.size(); ++i) {
    int m = remap[ds.labels[i]];
    if (m < 0) continue;
    out.labels.push_back(static_cast<uint8_t>(m));
    const uint8_t* img = ds.image(i);
    out.pixels.insert(out.pixels.end(), img, img + ds.image_bytes());
  }
  out.validate();
  return out;
}

uint8_t luminance(uint8_t r, uint8_t g, uint8_t b) {
  double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<uint8_t>(std::lround(y));
}

ImageDataset adapt_channels(const ImageDataset& ds, int target_channels) {
  require(target_channels == 1 || target_channels == 3, ErrorCode::InvalidArgument,
          "target channel count must be 1 or 3");
  if (ds.c == target_channels) return ds;
  ImageDataset out;
  out.name = ds.name;
  out.class_count = ds.class_count;
  out.h = ds.h;
  out.w = ds.w;
  out.c = target_channels;
  out.labels = ds.labels;
  const size_t plane = static_cast<size_t>(ds.h) * ds.w;
  out.pixels.resize(ds.size() * out.image_bytes());
  for (size_t i = 0; i < ds.size(); ++i) {
    const uint8_t* src = ds.image(i);
    uint8_t* dst = out.pixels.data() + i * out.image_bytes();
    if (target_channels == 3) {
      std::memcpy(dst, src, plane);
      std::memcpy(dst + plane, src, plane);
      std::memcpy(dst + 2 * plane, src, plane);
    } else {
      for (size_t p = 0; p < plane; ++p)
        dst[p] = luminance(src[p], src[plane + p], src[2 * plane + p]);
    }
  }
  out.validate();
  return out;
}

ImageDataset pad_to(const ImageDataset& ds, int target_h, int target_w) {
  require(target_h >= ds.h && target_w >= ds.w, ErrorCode::InvalidArgument,
          "pad target " + std::to_string(target_h) + "x" + std::to_string(target_w) +
              " smaller than source " + std::to_string(ds.h) + "x" + std::to_string(ds.w));
  if (target_h == ds.h && target_w == ds.w) return ds;
  ImageDataset out;
  out.name = ds.name;
  out.class_count = ds.class_count;
  out.h = target_h;
  out.w = target_w;
  out.c = ds.c;
  out.labels = ds.labels;
  const int top = (target_h - ds.h) / 2;
  const int left = (target_w - ds.w) / 2;
  out.pixels.assign(ds.size() * out.image_bytes(), 0);
  for (size_t i = 0; i < ds.size(); ++i) {
    const uint8_t* src = ds.image(i);
    uint8_t* dst = out.pixels.data() + i * out.image_bytes();
    for (int ch = 0; ch < ds.c; ++ch) {
      for (int y = 0; y < ds.h; ++y) {
        std::memcpy(dst + (static_cast<size_t>(ch) * target_h + top + y) * target_w + left,
                    src + (static_cast<size_t>(ch) * ds.h + y) * ds.w, ds.w);
      }
    }
  }
  out.validate();
  return out;
}

NormStats compute_norm_stats(const ImageDataset& ds) {
  require(ds.size() > 0, ErrorCode::InvalidArgument, "cannot compute stats of an empty dataset");
  const size_t plane = static_cast<size_t>(ds.h) * ds.w;
  NormStats stats;
  stats.mean.assign(ds.c, 0.0f);
  stats.stddev.assign(ds.c, 0.0f);
  for (int ch = 0; ch < ds.c; ++ch) {
    double sum = 0.0, sum2 = 0.0;
    for (size_t i = 0; i < ds.size(); ++i) {
      const uint8_t* p = ds.image(i) + ch * plane;
      for (size_t j = 0; j < plane; ++j) {
        double v = p[j] / 255.0;
        sum += v;
        sum2 += v * v;
      }
    }
    double n = static_cast<double>(ds.size()) * plane;
    double mean = sum / n;
    double var = std::max(sum2 / n - mean * mean, 0.0);
    stats.mean[ch] = static_cast<float>(mean);
    stats.stddev[ch] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
  }
  return stats;
}

Tensor normalize(const ImageDataset& ds, const NormStats& stats) {
  require(static_cast<int>(stats.mean.size()) == ds.c &&
              static_cast<int>(stats.stddev.size()) == ds.c,
          ErrorCode::ShapeMismatch, "normalization stats channel mismatch");
  Tensor out = Tensor::zeros({static_cast<int>(ds.size()), ds.c, ds.h, ds.w});
  std::vector<int> idx(ds.size());
  for (size_t i = 0; i < ds.size(); ++i) idx[i] = static_cast<int>(i);
  fill_normalized_batch(ds, idx, stats, out);
  return out;
}

void fill_normalized_batch(const ImageDataset& ds, const std::vector<int>& indices,
                           const NormStats& stats, Tensor& out) {
  const size_t plane = static_cast<size_t>(ds.h) * ds.w;
  const size_t img = ds.image_bytes();
  out.shape = {static_cast<int>(indices.size()), ds.c, ds.h, ds.w};
  out.data.resize(indices.size() * img);
  for (size_t i = 0; i < indices.size(); ++i) {
    const uint8_t* src = ds.image(indices[i]);
    float* dst = out.data.data() + i * img;
    for (int ch = 0; ch < ds.c; ++ch) {
      const float mean = stats.mean[ch];
      const float inv = 1.0f / stats.stddev[ch];
      for (size_t j = 0; j < plane; ++j) {
        dst[ch * plane + j] = (u8_to_unit(src[ch * plane + j]) - mean) * inv;
      }
    }
  }
}

}  // namespace moe
