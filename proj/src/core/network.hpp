#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace moe {

enum class LayerKind { Conv, MaxPool, Dense, Relu, Flatten };

struct LayerSpec {
  LayerKind kind{};
  int out_channels = 0;  // conv
  int kernel = 0;        // conv, maxpool (pool stride == kernel)
  int stride = 1;        // conv
  int out_dim = 0;       // dense

  static LayerSpec conv(int out_channels, int kernel, int stride = 1);
  static LayerSpec maxpool(int kernel);
  static LayerSpec dense(int out_dim);
  static LayerSpec relu();
  static LayerSpec flatten();

  bool has_params() const { return kind == LayerKind::Conv || kind == LayerKind::Dense; }
  std::string to_string() const;
};

// Shape flowing between layers: either an image (c,h,w) or a flat vector.
struct IOShape {
  bool is_image = false;
  int c = 0, h = 0, w = 0;
  int dim = 0;  // flat width when !is_image

  static IOShape image(int c, int h, int w);
  static IOShape flat(int dim);
  int64_t numel() const;
  bool operator==(const IOShape&) const = default;
  std::string to_string() const;
};

// Per-layer outputs of one forward pass; the last entry is the pre-softmax
// logits. Feature extraction for gating reads from here.
struct ActivationTrace {
  std::vector<Tensor> outputs;  // one per layer, batch-major
  const Tensor& logits() const { return outputs.back(); }
};

template <class S>
struct NetT;

// Fixed layer-chain network with float32 weights. Forward is const and
// thread-safe; training mutates through the optimizer in train.hpp.
class Network {
 public:
  Network(IOShape input, std::vector<LayerSpec> specs);
  Network(const Network&);
  Network& operator=(const Network&);
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;
  ~Network();

  const std::vector<LayerSpec>& specs() const;
  const std::vector<IOShape>& layer_shapes() const;  // output shape per layer
  IOShape input_shape() const;
  IOShape output_shape() const;
  int logits_width() const;

  void init_weights(uint64_t seed);
  int64_t parameter_count() const;

  // Interleaved (weight, bias) tensors for every parameterized layer, in
  // chain order. Used by checkpoints and tests.
  std::vector<Tensor> snapshot_params() const;
  void load_params(const std::vector<Tensor>& params);

  ActivationTrace forward(const Tensor& batch) const;
  Tensor forward_logits(const Tensor& batch) const;

  NetT<float>& impl() { return *impl_; }
  const NetT<float>& impl() const { return *impl_; }

 private:
  std::unique_ptr<NetT<float>> impl_;
};

// Validates a batch against an input shape: [n,c,h,w] for images, [n,d] for
// flat inputs. Returns the batch size.
int batch_size_for(const IOShape& input, const Tensor& batch);

}  // namespace moe
