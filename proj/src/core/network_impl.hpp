#pragma once

// Templated layer math shared by the float32 production path and the
// float64 instantiation used by the gradient checker. Only network.cpp,
// train.cpp and gradcheck.cpp include this header.

#include <Eigen/Dense>
#include <cstring>
#include <vector>

#include "core/error.hpp"
#include "core/network.hpp"
#include "core/rng.hpp"

namespace moe {

template <class S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using VecMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <class S>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

// Geometry of one conv application, precomputed at build time.
struct ConvDims {
  int c = 0, h = 0, w = 0;
  int oc = 0, k = 0, stride = 1;
  int oh = 0, ow = 0;
  int ckk() const { return c * k * k; }
  int out_spatial() const { return oh * ow; }
};

template <class S>
void im2col(const ConvDims& d, const S* in, S* col, int n) {
  // col is [ckk x n*oh*ow]; column (i, oy, ox) holds the receptive field.
  const int ckk = d.ckk();
  const int cols = n * d.out_spatial();
  for (int img = 0; img < n; ++img) {
    const S* src = in + static_cast<size_t>(img) * d.c * d.h * d.w;
    const int col0 = img * d.out_spatial();
    for (int c = 0; c < d.c; ++c) {
      for (int ki = 0; ki < d.k; ++ki) {
        for (int kj = 0; kj < d.k; ++kj) {
          const int r = (c * d.k + ki) * d.k + kj;
          S* dst = col + static_cast<size_t>(r) * cols + col0;
          for (int oy = 0; oy < d.oh; ++oy) {
            const S* line = src + (c * d.h + oy * d.stride + ki) * d.w + kj;
            if (d.stride == 1) {
              std::memcpy(dst + oy * d.ow, line, sizeof(S) * d.ow);
            } else {
              for (int ox = 0; ox < d.ow; ++ox) dst[oy * d.ow + ox] = line[ox * d.stride];
            }
          }
        }
      }
    }
  }
  (void)ckk;
}

template <class S>
void col2im_add(const ConvDims& d, const S* col, S* din, int n) {
  const int cols = n * d.out_spatial();
  for (int img = 0; img < n; ++img) {
    S* dst = din + static_cast<size_t>(img) * d.c * d.h * d.w;
    const int col0 = img * d.out_spatial();
    for (int c = 0; c < d.c; ++c) {
      for (int ki = 0; ki < d.k; ++ki) {
        for (int kj = 0; kj < d.k; ++kj) {
          const int r = (c * d.k + ki) * d.k + kj;
          const S* src = col + static_cast<size_t>(r) * cols + col0;
          for (int oy = 0; oy < d.oh; ++oy) {
            S* line = dst + (c * d.h + oy * d.stride + ki) * d.w + kj;
            for (int ox = 0; ox < d.ow; ++ox) line[ox * d.stride] += src[oy * d.ow + ox];
          }
        }
      }
    }
  }
}

// out[n, oc, oh, ow] = weight[oc, ckk] * col + bias; col must be prefilled.
template <class S>
void conv_forward_gemm(const ConvDims& d, const S* col, const S* weight, const S* bias, S* out,
                       int n) {
  const int cols = n * d.out_spatial();
  ConstMatMap<S> w(weight, d.oc, d.ckk());
  ConstMatMap<S> cm(col, d.ckk(), cols);
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> om = w * cm;
  for (int img = 0; img < n; ++img) {
    for (int oc = 0; oc < d.oc; ++oc) {
      S* dst = out + (static_cast<size_t>(img) * d.oc + oc) * d.out_spatial();
      const S* src = om.data() + static_cast<size_t>(oc) * cols + img * d.out_spatial();
      for (int p = 0; p < d.out_spatial(); ++p) dst[p] = src[p] + bias[oc];
    }
  }
}

template <class S>
void conv_backward_gemm(const ConvDims& d, const S* col, const S* weight, const S* dout,
                        S* dweight, S* dbias, S* dcol, S* din, int n) {
  const int cols = n * d.out_spatial();
  // gather dout [n, oc, p] into matrix [oc, n*p]
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dm(d.oc, cols);
  for (int img = 0; img < n; ++img) {
    for (int oc = 0; oc < d.oc; ++oc) {
      const S* src = dout + (static_cast<size_t>(img) * d.oc + oc) * d.out_spatial();
      std::memcpy(dm.data() + static_cast<size_t>(oc) * cols + img * d.out_spatial(), src,
                  sizeof(S) * d.out_spatial());
    }
  }
  ConstMatMap<S> cm(col, d.ckk(), cols);
  MatMap<S>(dweight, d.oc, d.ckk()).noalias() = dm * cm.transpose();
  VecMap<S>(dbias, d.oc).noalias() = dm.rowwise().sum();
  if (din != nullptr) {
    ConstMatMap<S> w(weight, d.oc, d.ckk());
    MatMap<S>(dcol, d.ckk(), cols).noalias() = w.transpose() * dm;
    std::memset(din, 0, sizeof(S) * static_cast<size_t>(n) * d.c * d.h * d.w);
    col2im_add(d, dcol, din, n);
  }
}

template <class S>
void maxpool_forward(int n, int c, int h, int w, int k, const S* in, S* out, int* argmax) {
  const int oh = h / k, ow = w / k;
  size_t o = 0;
  for (int img = 0; img < n; ++img) {
    for (int ch = 0; ch < c; ++ch) {
      const S* plane = in + (static_cast<size_t>(img) * c + ch) * h * w;
      const size_t plane_off = (static_cast<size_t>(img) * c + ch) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++o) {
          int best = (oy * k) * w + ox * k;
          S bv = plane[best];
          for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
              int idx = (oy * k + ki) * w + (ox * k + kj);
              if (plane[idx] > bv) {
                bv = plane[idx];
                best = idx;
              }
            }
          }
          out[o] = bv;
          if (argmax != nullptr) argmax[o] = static_cast<int>(plane_off) + best;
        }
      }
    }
  }
}

template <class S>
void dense_forward(int n, int din, int dout, const S* in, const S* weight, const S* bias, S* out) {
  ConstMatMap<S> x(in, n, din);
  ConstMatMap<S> w(weight, dout, din);
  ConstVecMap<S> b(bias, dout);
  MatMap<S> y(out, n, dout);
  y.noalias() = x * w.transpose();
  y.rowwise() += b.transpose();
}

template <class S>
void dense_backward(int n, int din, int dout, const S* in, const S* weight, const S* dy,
                    S* dweight, S* dbias, S* dx) {
  ConstMatMap<S> x(in, n, din);
  ConstMatMap<S> w(weight, dout, din);
  ConstMatMap<S> g(dy, n, dout);
  MatMap<S>(dweight, dout, din).noalias() = g.transpose() * x;
  VecMap<S>(dbias, dout).noalias() = g.colwise().sum();
  if (dx != nullptr) MatMap<S>(dx, n, din).noalias() = g * w;
}

// Mean cross-entropy with optional per-sample weights (weights are
// normalized by their sum; nullptr means uniform). Row-max subtraction
// keeps exp() in range. dlogits may be null when only the loss is needed.
template <class S>
double cross_entropy_rows(const S* logits, int n, int k, const int* labels,
                          const float* sample_weights, S* dlogits) {
  require(n > 0, ErrorCode::InvalidArgument, "cross entropy needs a nonempty batch");
  double wsum = 0.0;
  if (sample_weights != nullptr) {
    for (int i = 0; i < n; ++i) wsum += sample_weights[i];
    require(wsum > 0.0, ErrorCode::InvalidArgument, "sample weights sum to zero");
  } else {
    wsum = n;
  }
  double loss = 0.0;
  std::vector<double> p(k);
  for (int i = 0; i < n; ++i) {
    require(labels[i] >= 0 && labels[i] < k, ErrorCode::InvalidArgument,
            "label " + std::to_string(labels[i]) + " out of range for " + std::to_string(k) +
                " classes");
    const S* row = logits + static_cast<size_t>(i) * k;
    double m = static_cast<double>(row[0]);
    for (int j = 1; j < k; ++j) m = std::max(m, static_cast<double>(row[j]));
    double z = 0.0;
    for (int j = 0; j < k; ++j) {
      p[j] = std::exp(static_cast<double>(row[j]) - m);
      z += p[j];
    }
    const double wi = sample_weights ? sample_weights[i] : 1.0;
    loss += wi * (std::log(z) - (static_cast<double>(row[labels[i]]) - m));
    if (dlogits != nullptr) {
      S* drow = dlogits + static_cast<size_t>(i) * k;
      for (int j = 0; j < k; ++j) {
        double soft = p[j] / z;
        drow[j] = static_cast<S>(wi * (soft - (j == labels[i] ? 1.0 : 0.0)) / wsum);
      }
    }
  }
  return loss / wsum;
}

template <class S>
struct NetT {
  IOShape input;
  std::vector<LayerSpec> specs;
  std::vector<IOShape> shapes;     // output shape per layer
  std::vector<ConvDims> conv_dims; // valid where specs[l].kind == Conv
  std::vector<std::vector<S>> weights, biases;  // empty for non-param layers

  NetT(IOShape in, std::vector<LayerSpec> sp) : input(in), specs(std::move(sp)) {
    require(!specs.empty(), ErrorCode::InvalidArgument, "layer chain is empty");
    shapes.reserve(specs.size());
    conv_dims.resize(specs.size());
    weights.resize(specs.size());
    biases.resize(specs.size());
    IOShape cur = input;
    for (size_t l = 0; l < specs.size(); ++l) {
      const LayerSpec& s = specs[l];
      switch (s.kind) {
        case LayerKind::Conv: {
          require(cur.is_image, ErrorCode::InvalidArgument,
                  "conv layer " + std::to_string(l) + " needs an image input, got " + cur.to_string());
          require(s.out_channels > 0 && s.kernel > 0 && s.stride > 0, ErrorCode::InvalidArgument,
                  "bad conv parameters at layer " + std::to_string(l));
          require(cur.h >= s.kernel && cur.w >= s.kernel, ErrorCode::ShapeMismatch,
                  "conv kernel " + std::to_string(s.kernel) + " larger than input " + cur.to_string());
          ConvDims d;
          d.c = cur.c; d.h = cur.h; d.w = cur.w;
          d.oc = s.out_channels; d.k = s.kernel; d.stride = s.stride;
          d.oh = (cur.h - s.kernel) / s.stride + 1;
          d.ow = (cur.w - s.kernel) / s.stride + 1;
          conv_dims[l] = d;
          weights[l].assign(static_cast<size_t>(d.oc) * d.ckk(), S(0));
          biases[l].assign(d.oc, S(0));
          cur = IOShape::image(d.oc, d.oh, d.ow);
          break;
        }
        case LayerKind::MaxPool: {
          require(cur.is_image, ErrorCode::InvalidArgument,
                  "maxpool layer " + std::to_string(l) + " needs an image input");
          require(s.kernel > 0 && cur.h % s.kernel == 0 && cur.w % s.kernel == 0,
                  ErrorCode::ShapeMismatch,
                  "maxpool kernel " + std::to_string(s.kernel) + " does not divide " + cur.to_string());
          cur = IOShape::image(cur.c, cur.h / s.kernel, cur.w / s.kernel);
          break;
        }
        case LayerKind::Dense: {
          require(!cur.is_image, ErrorCode::InvalidArgument,
                  "dense layer " + std::to_string(l) + " needs a flat input (insert flatten), got " +
                      cur.to_string());
          require(s.out_dim > 0, ErrorCode::InvalidArgument, "dense out_dim must be positive");
          weights[l].assign(static_cast<size_t>(s.out_dim) * cur.dim, S(0));
          biases[l].assign(s.out_dim, S(0));
          cur = IOShape::flat(s.out_dim);
          break;
        }
        case LayerKind::Relu:
          break;
        case LayerKind::Flatten: {
          require(cur.is_image, ErrorCode::InvalidArgument,
                  "flatten layer " + std::to_string(l) + " needs an image input");
          cur = IOShape::flat(cur.c * cur.h * cur.w);
          break;
        }
      }
      shapes.push_back(cur);
    }
    require(!shapes.back().is_image, ErrorCode::InvalidArgument,
            "layer chain must end in a flat (logit) output");
  }

  void init_weights(uint64_t seed) {
    Rng rng(mix_seed(seed, 0x6d6f65));
    for (size_t l = 0; l < specs.size(); ++l) {
      if (weights[l].empty()) continue;
      int fan_in = specs[l].kind == LayerKind::Conv
                       ? conv_dims[l].ckk()
                       : static_cast<int>(weights[l].size()) / specs[l].out_dim;
      double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (S& v : weights[l]) v = static_cast<S>(rng.uniform(-bound, bound));
      for (S& v : biases[l]) v = static_cast<S>(rng.uniform(-bound, bound));
    }
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (size_t l = 0; l < specs.size(); ++l)
      n += static_cast<int64_t>(weights[l].size()) + static_cast<int64_t>(biases[l].size());
    return n;
  }

  struct Workspace {
    std::vector<std::vector<S>> acts;       // output per layer
    std::vector<std::vector<S>> cols;       // conv im2col cache
    std::vector<std::vector<int>> pool_idx; // maxpool argmax cache
    std::vector<std::vector<S>> dW, dB;     // parameter gradients
    int n = 0;
  };

  void forward(const S* in, int n, Workspace& ws, bool keep_for_backward) const {
    const size_t L = specs.size();
    ws.n = n;
    ws.acts.resize(L);
    ws.cols.resize(L);
    ws.pool_idx.resize(L);
    const S* cur = in;
    IOShape cur_shape = input;
    for (size_t l = 0; l < L; ++l) {
      const LayerSpec& s = specs[l];
      ws.acts[l].resize(static_cast<size_t>(n) * shapes[l].numel());
      S* out = ws.acts[l].data();
      switch (s.kind) {
        case LayerKind::Conv: {
          const ConvDims& d = conv_dims[l];
          ws.cols[l].resize(static_cast<size_t>(d.ckk()) * n * d.out_spatial());
          im2col(d, cur, ws.cols[l].data(), n);
          conv_forward_gemm(d, ws.cols[l].data(), weights[l].data(), biases[l].data(), out, n);
          if (!keep_for_backward) ws.cols[l].clear();
          break;
        }
        case LayerKind::MaxPool: {
          int* argmax = nullptr;
          if (keep_for_backward) {
            ws.pool_idx[l].resize(static_cast<size_t>(n) * shapes[l].numel());
            argmax = ws.pool_idx[l].data();
          }
          maxpool_forward(n, cur_shape.c, cur_shape.h, cur_shape.w, s.kernel, cur, out, argmax);
          break;
        }
        case LayerKind::Dense:
          dense_forward(n, cur_shape.dim, s.out_dim, cur, weights[l].data(), biases[l].data(), out);
          break;
        case LayerKind::Relu:
          for (size_t i = 0; i < ws.acts[l].size(); ++i) out[i] = cur[i] > S(0) ? cur[i] : S(0);
          break;
        case LayerKind::Flatten:
          std::memcpy(out, cur, sizeof(S) * ws.acts[l].size());
          break;
      }
      cur = out;
      cur_shape = shapes[l];
    }
  }

  // Backpropagates dlogits through a workspace produced by
  // forward(keep_for_backward=true); fills ws.dW/ws.dB.
  void backward(const S* in, const S* dlogits, Workspace& ws) const {
    const size_t L = specs.size();
    const int n = ws.n;
    ws.dW.resize(L);
    ws.dB.resize(L);
    std::vector<S> dcur(dlogits, dlogits + static_cast<size_t>(n) * shapes.back().numel());
    std::vector<S> dprev, dcol;
    for (size_t li = L; li-- > 0;) {
      const LayerSpec& s = specs[li];
      const IOShape in_shape = li == 0 ? input : shapes[li - 1];
      const S* layer_in = li == 0 ? in : ws.acts[li - 1].data();
      const bool need_din = li > 0;
      dprev.assign(static_cast<size_t>(n) * in_shape.numel(), S(0));
      switch (s.kind) {
        case LayerKind::Conv: {
          const ConvDims& d = conv_dims[li];
          ws.dW[li].assign(weights[li].size(), S(0));
          ws.dB[li].assign(biases[li].size(), S(0));
          dcol.resize(ws.cols[li].size());
          conv_backward_gemm(d, ws.cols[li].data(), weights[li].data(), dcur.data(),
                             ws.dW[li].data(), ws.dB[li].data(), dcol.data(),
                             need_din ? dprev.data() : nullptr, n);
          break;
        }
        case LayerKind::MaxPool: {
          if (need_din) {
            const std::vector<int>& idx = ws.pool_idx[li];
            for (size_t o = 0; o < dcur.size(); ++o) dprev[idx[o]] += dcur[o];
          }
          break;
        }
        case LayerKind::Dense:
          ws.dW[li].assign(weights[li].size(), S(0));
          ws.dB[li].assign(biases[li].size(), S(0));
          dense_backward(n, in_shape.dim, s.out_dim, layer_in, weights[li].data(), dcur.data(),
                         ws.dW[li].data(), ws.dB[li].data(), need_din ? dprev.data() : nullptr);
          break;
        case LayerKind::Relu: {
          if (need_din) {
            const std::vector<S>& out = ws.acts[li];
            for (size_t i = 0; i < dcur.size(); ++i) dprev[i] = out[i] > S(0) ? dcur[i] : S(0);
          }
          break;
        }
        case LayerKind::Flatten:
          if (need_din) std::memcpy(dprev.data(), dcur.data(), sizeof(S) * dcur.size());
          break;
      }
      if (!need_din) break;
      dcur.swap(dprev);
    }
  }
};

}  // namespace moe
