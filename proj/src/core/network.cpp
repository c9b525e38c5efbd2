#include "core/network.hpp"

#include <sstream>

#include "core/network_impl.hpp"

namespace moe {

template struct NetT<float>;
template struct NetT<double>;

LayerSpec LayerSpec::conv(int out_channels, int kernel, int stride) {
  LayerSpec s;
  s.kind = LayerKind::Conv;
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::maxpool(int kernel) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool;
  s.kernel = kernel;
  return s;
}

LayerSpec LayerSpec::dense(int out_dim) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.out_dim = out_dim;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::Relu;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  return s;
}

std::string LayerSpec::to_string() const {
  std::ostringstream os;
  switch (kind) {
    case LayerKind::Conv:
      os << "conv(" << out_channels << "," << kernel << "x" << kernel << ",s" << stride << ")";
      break;
    case LayerKind::MaxPool: os << "maxpool(" << kernel << ")"; break;
    case LayerKind::Dense: os << "dense(" << out_dim << ")"; break;
    case LayerKind::Relu: os << "relu"; break;
    case LayerKind::Flatten: os << "flatten"; break;
  }
  return os.str();
}

IOShape IOShape::image(int c, int h, int w) {
  IOShape s;
  s.is_image = true;
  s.c = c;
  s.h = h;
  s.w = w;
  return s;
}

IOShape IOShape::flat(int dim) {
  IOShape s;
  s.dim = dim;
  return s;
}

int64_t IOShape::numel() const {
  return is_image ? static_cast<int64_t>(c) * h * w : static_cast<int64_t>(dim);
}

std::string IOShape::to_string() const {
  std::ostringstream os;
  if (is_image)
    os << "(" << c << "," << h << "," << w << ")";
  else
    os << "(" << dim << ")";
  return os.str();
}

Network::Network(IOShape input, std::vector<LayerSpec> specs)
    : impl_(std::make_unique<NetT<float>>(input, std::move(specs))) {}

Network::Network(const Network& other) : impl_(std::make_unique<NetT<float>>(*other.impl_)) {}

Network& Network::operator=(const Network& other) {
  if (this != &other) impl_ = std::make_unique<NetT<float>>(*other.impl_);
  return *this;
}

Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;
Network::~Network() = default;

const std::vector<LayerSpec>& Network::specs() const { return impl_->specs; }
const std::vector<IOShape>& Network::layer_shapes() const { return impl_->shapes; }
IOShape Network::input_shape() const { return impl_->input; }
IOShape Network::output_shape() const { return impl_->shapes.back(); }
int Network::logits_width() const { return impl_->shapes.back().dim; }

void Network::init_weights(uint64_t seed) { impl_->init_weights(seed); }
int64_t Network::parameter_count() const { return impl_->parameter_count(); }

std::vector<Tensor> Network::snapshot_params() const {
  std::vector<Tensor> out;
  for (size_t l = 0; l < impl_->specs.size(); ++l) {
    if (impl_->weights[l].empty()) continue;
    const LayerSpec& s = impl_->specs[l];
    if (s.kind == LayerKind::Conv) {
      const ConvDims& d = impl_->conv_dims[l];
      out.emplace_back(std::vector<int>{d.oc, d.c, d.k, d.k}, impl_->weights[l]);
      out.emplace_back(std::vector<int>{d.oc}, impl_->biases[l]);
    } else {
      int in_dim = static_cast<int>(impl_->weights[l].size()) / s.out_dim;
      out.emplace_back(std::vector<int>{s.out_dim, in_dim}, impl_->weights[l]);
      out.emplace_back(std::vector<int>{s.out_dim}, impl_->biases[l]);
    }
  }
  return out;
}

void Network::load_params(const std::vector<Tensor>& params) {
  size_t pi = 0;
  for (size_t l = 0; l < impl_->specs.size(); ++l) {
    if (impl_->weights[l].empty()) continue;
    require(pi + 2 <= params.size(), ErrorCode::InvalidArgument,
            "parameter list too short for layer chain");
    const Tensor& w = params[pi++];
    const Tensor& b = params[pi++];
    require(w.data.size() == impl_->weights[l].size() && b.data.size() == impl_->biases[l].size(),
            ErrorCode::ShapeMismatch,
            "parameter size mismatch at layer " + std::to_string(l) + ": got " + w.shape_str() +
                "/" + b.shape_str());
    impl_->weights[l] = w.data;
    impl_->biases[l] = b.data;
  }
  require(pi == params.size(), ErrorCode::InvalidArgument,
          "parameter list has " + std::to_string(params.size()) + " tensors, expected " +
              std::to_string(pi));
}

int batch_size_for(const IOShape& input, const Tensor& batch) {
  if (input.is_image) {
    require(batch.rank() == 4 && batch.dim(1) == input.c && batch.dim(2) == input.h &&
                batch.dim(3) == input.w,
            ErrorCode::ShapeMismatch,
            "batch shape " + batch.shape_str() + " does not match network input " +
                input.to_string());
  } else {
    require(batch.rank() == 2 && batch.dim(1) == input.dim, ErrorCode::ShapeMismatch,
            "batch shape " + batch.shape_str() + " does not match network input " +
                input.to_string());
  }
  return batch.dim(0);
}

ActivationTrace Network::forward(const Tensor& batch) const {
  const int n = batch_size_for(impl_->input, batch);
  NetT<float>::Workspace ws;
  impl_->forward(batch.data.data(), n, ws, /*keep_for_backward=*/false);
  ActivationTrace trace;
  trace.outputs.reserve(impl_->specs.size());
  for (size_t l = 0; l < impl_->specs.size(); ++l) {
    const IOShape& s = impl_->shapes[l];
    std::vector<int> shape =
        s.is_image ? std::vector<int>{n, s.c, s.h, s.w} : std::vector<int>{n, s.dim};
    trace.outputs.emplace_back(std::move(shape), std::move(ws.acts[l]));
  }
  return trace;
}

Tensor Network::forward_logits(const Tensor& batch) const {
  const int n = batch_size_for(impl_->input, batch);
  NetT<float>::Workspace ws;
  impl_->forward(batch.data.data(), n, ws, /*keep_for_backward=*/false);
  return Tensor({n, impl_->shapes.back().dim}, std::move(ws.acts.back()));
}

}  // namespace moe
