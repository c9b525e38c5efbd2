#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "core/error.hpp"
#include "core/gradcheck.hpp"
#include "core/loss.hpp"
#include "core/network.hpp"
#include "core/rng.hpp"
#include "core/train.hpp"

using namespace moe;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  Rng rng(seed);
  for (float& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Straight-line re-computation of conv -> relu -> flatten -> dense in double,
// independent of the layer implementations.
std::vector<double> reference_conv_relu_dense(const Tensor& input, const std::vector<Tensor>& p,
                                              int oc, int k, int out_dim) {
  const int c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int oh = h - k + 1, ow = w - k + 1;
  const Tensor& cw = p[0];
  const Tensor& cb = p[1];
  const Tensor& dw = p[2];
  const Tensor& db = p[3];
  std::vector<double> conv(static_cast<size_t>(oc) * oh * ow, 0.0);
  for (int o = 0; o < oc; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = cb.data[o];
        for (int ci = 0; ci < c; ++ci) {
          for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
              double wv = cw.data[((o * c + ci) * k + ki) * k + kj];
              double iv = input.data[(ci * h + y + ki) * w + (x + kj)];
              acc += wv * iv;
            }
          }
        }
        conv[(o * oh + y) * ow + x] = acc > 0.0 ? acc : 0.0;  // relu
      }
    }
  }
  const int flat = oc * oh * ow;
  std::vector<double> out(out_dim, 0.0);
  for (int d = 0; d < out_dim; ++d) {
    double acc = db.data[d];
    for (int i = 0; i < flat; ++i) acc += static_cast<double>(dw.data[d * flat + i]) * conv[i];
    out[d] = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("tensor shape/data invariant is enforced") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5, 0.0f)), Error);
  CHECK_THROWS_AS(Tensor({0, 3}, {}), Error);
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
}

TEST_CASE("identity dense layer reproduces its input") {
  Network net(IOShape::flat(4), {LayerSpec::dense(4)});
  auto params = net.snapshot_params();
  for (int i = 0; i < 4; ++i) params[0].data[i * 4 + i] = 1.0f;
  net.load_params(params);
  Tensor v({2, 4}, {1.0f, -2.0f, 3.5f, 0.25f, 0.0f, 1.0f, -1.0f, 2.0f});
  Tensor out = net.forward_logits(v);
  for (size_t i = 0; i < v.data.size(); ++i) CHECK(out.data[i] == v.data[i]);
}

TEST_CASE("all-zero weights produce zero logits") {
  Network net(IOShape::image(1, 8, 8),
              {LayerSpec::conv(2, 3), LayerSpec::relu(), LayerSpec::maxpool(2),
               LayerSpec::flatten(), LayerSpec::dense(5)});
  Tensor in = random_tensor({3, 1, 8, 8}, 7);
  Tensor out = net.forward_logits(in);
  for (float v : out.data) CHECK(v == 0.0f);
}

TEST_CASE("random two-layer net matches straight-line re-computation") {
  const int oc = 3, k = 3, out_dim = 4;
  Network net(IOShape::image(2, 6, 6),
              {LayerSpec::conv(oc, k), LayerSpec::relu(), LayerSpec::flatten(),
               LayerSpec::dense(out_dim)});
  net.init_weights(42);
  Tensor in = random_tensor({1, 2, 6, 6}, 99);
  Tensor got = net.forward_logits(in);
  auto expect = reference_conv_relu_dense(in, net.snapshot_params(), oc, k, out_dim);
  REQUIRE(got.data.size() == expect.size());
  for (size_t i = 0; i < expect.size(); ++i)
    CHECK(got.data[i] == doctest::Approx(expect[i]).epsilon(1e-4));
}

TEST_CASE("forward records every layer output and logits last") {
  Network net(IOShape::image(1, 8, 8),
              {LayerSpec::conv(2, 3), LayerSpec::relu(), LayerSpec::maxpool(3),
               LayerSpec::flatten(), LayerSpec::dense(5)});
  net.init_weights(1);
  Tensor in = random_tensor({2, 1, 8, 8}, 2);
  ActivationTrace trace = net.forward(in);
  REQUIRE(trace.outputs.size() == 5);
  CHECK(trace.outputs[0].shape == std::vector<int>{2, 2, 6, 6});
  CHECK(trace.outputs[2].shape == std::vector<int>{2, 2, 2, 2});
  CHECK(trace.logits().shape == std::vector<int>{2, 5});
}

TEST_CASE("forward rejects shape mismatches naming both shapes") {
  Network net(IOShape::image(1, 8, 8), {LayerSpec::flatten(), LayerSpec::dense(3)});
  Tensor wrong = Tensor::zeros({1, 3, 8, 8});
  try {
    net.forward(wrong);
    FAIL("expected shape mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
    CHECK(std::string(e.what()).find("[1x3x8x8]") != std::string::npos);
    CHECK(std::string(e.what()).find("(1,8,8)") != std::string::npos);
  }
}

TEST_CASE("forward is pure: repeated calls are bit-identical") {
  Network net(IOShape::image(1, 12, 12),
              {LayerSpec::conv(4, 5), LayerSpec::relu(), LayerSpec::maxpool(2),
               LayerSpec::flatten(), LayerSpec::dense(7)});
  net.init_weights(5);
  Tensor in = random_tensor({4, 1, 12, 12}, 11);
  Tensor a = net.forward_logits(in);
  Tensor b = net.forward_logits(in);
  CHECK(a.data == b.data);
}

TEST_CASE("layer chain type-checking rejects invalid chains") {
  CHECK_THROWS_AS(Network(IOShape::image(1, 8, 8), {LayerSpec::dense(3)}), Error);
  CHECK_THROWS_AS(Network(IOShape::flat(16), {LayerSpec::conv(2, 3)}), Error);
  CHECK_THROWS_AS(Network(IOShape::image(1, 8, 8), {LayerSpec::maxpool(3), LayerSpec::flatten(),
                                                    LayerSpec::dense(1)}),
                  Error);  // 8 % 3 != 0
  CHECK_THROWS_AS(Network(IOShape::image(1, 4, 4), {LayerSpec::conv(1, 5)}), Error);
}

TEST_CASE("cross entropy: uniform two-logit case gives ln 2") {
  Tensor logits({1, 2}, {0.0f, 0.0f});
  LossResult r = cross_entropy_loss(logits, {0});
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  // gradient = (softmax - onehot)/n = ([0.5,0.5] - [1,0]) / 1
  CHECK(r.dlogits.data[0] == doctest::Approx(-0.5).epsilon(1e-6));
  CHECK(r.dlogits.data[1] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("cross entropy: saturated logit drives loss to zero") {
  Tensor logits({1, 3}, {1000.0f, 0.0f, 0.0f});
  LossResult r = cross_entropy_loss(logits, {0});
  CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(std::isfinite(r.loss));
}

TEST_CASE("cross entropy matches brute-force formula on a random batch") {
  Tensor logits = random_tensor({16, 7}, 123, -4.0, 4.0);
  std::vector<int> labels(16);
  Rng rng(321);
  for (int& l : labels) l = static_cast<int>(rng.below(7));
  LossResult r = cross_entropy_loss(logits, labels);
  double expect = 0.0;
  for (int i = 0; i < 16; ++i) {
    double m = -1e30;
    for (int j = 0; j < 7; ++j) m = std::max(m, static_cast<double>(logits.data[i * 7 + j]));
    double z = 0.0;
    for (int j = 0; j < 7; ++j) z += std::exp(static_cast<double>(logits.data[i * 7 + j]) - m);
    expect -= std::log(std::exp(static_cast<double>(logits.data[i * 7 + labels[i]]) - m) / z);
  }
  expect /= 16;
  CHECK(r.loss == doctest::Approx(expect).epsilon(1e-8));
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  Tensor logits({2, 3}, {0, 0, 0, 0, 0, 0});
  CHECK_THROWS_AS(cross_entropy_loss(logits, {0, 3}), Error);
  CHECK_THROWS_AS(cross_entropy_loss(logits, {0}), Error);  // row/label count mismatch
}

TEST_CASE("softmax rows are a probability distribution") {
  Tensor logits = random_tensor({8, 5}, 77, -10.0, 10.0);
  Tensor p = softmax_rows(logits);
  for (int i = 0; i < 8; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 5; ++j) {
      CHECK(p.data[i * 5 + j] >= 0.0f);
      sum += p.data[i * 5 + j];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("sgd with zero learning rate leaves weights unchanged") {
  Network net(IOShape::flat(3), {LayerSpec::dense(2)});
  net.init_weights(9);
  auto before = net.snapshot_params();
  TrainConfig cfg;
  cfg.learning_rate = 0.0f;
  SgdOptimizer opt(net);
  Tensor batch = random_tensor({4, 3}, 10);
  opt.step(net, batch, {0, 1, 0, 1}, cfg);
  auto after = net.snapshot_params();
  for (size_t i = 0; i < before.size(); ++i) CHECK(before[i].data == after[i].data);
}

TEST_CASE("single-weight linear model matches hand-derived update") {
  // one dense layer, 1 input, 2 outputs, weights/bias zero except w00 = w.
  // input x, label 0: logits (w*x, 0); d loss/d w00 = (softmax0 - 1) * x.
  Network net(IOShape::flat(1), {LayerSpec::dense(2)});
  auto params = net.snapshot_params();
  const double w = 0.5, x = 2.0, lr = 0.1;
  params[0].data = {static_cast<float>(w), 0.0f};
  params[1].data = {0.0f, 0.0f};
  net.load_params(params);
  TrainConfig cfg;
  cfg.learning_rate = static_cast<float>(lr);
  cfg.momentum = 0.0f;
  SgdOptimizer opt(net);
  Tensor batch({1, 1}, {static_cast<float>(x)});
  double loss = opt.step(net, batch, {0}, cfg);

  const double p0 = std::exp(w * x) / (std::exp(w * x) + 1.0);
  CHECK(loss == doctest::Approx(-std::log(p0)).epsilon(1e-5));
  const double expect_w = w - lr * (p0 - 1.0) * x;
  auto after = net.snapshot_params();
  CHECK(after[0].data[0] == doctest::Approx(expect_w).epsilon(1e-5));
  // b1 gradient is softmax1 = 1 - p0
  CHECK(after[1].data[1] == doctest::Approx(0.0 - lr * (1.0 - p0)).epsilon(1e-5));
}

TEST_CASE("loss decreases monotonically on a separable toy problem") {
  Network net(IOShape::flat(2), {LayerSpec::dense(8), LayerSpec::relu(), LayerSpec::dense(2)});
  net.init_weights(3);
  Tensor batch({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  std::vector<int> labels{0, 1};
  TrainConfig cfg;
  cfg.learning_rate = 0.1f;
  cfg.momentum = 0.0f;
  SgdOptimizer opt(net);
  double prev = opt.step(net, batch, labels, cfg);
  for (int i = 0; i < 10; ++i) {
    double cur = opt.step(net, batch, labels, cfg);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("non-finite gradients abort the run with a diagnostic") {
  Network net(IOShape::flat(2), {LayerSpec::dense(2)});
  auto params = net.snapshot_params();
  params[0].data = {std::numeric_limits<float>::infinity(), 0.0f, 0.0f, 0.0f};
  net.load_params(params);
  TrainConfig cfg;
  SgdOptimizer opt(net);
  Tensor batch({1, 2}, {1.0f, 1.0f});
  try {
    opt.step(net, batch, {0}, cfg);
    FAIL("expected numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Numeric);
  }
}

TEST_CASE("training is bit-reproducible for identical config and data") {
  auto train_once = [] {
    Network net(IOShape::flat(4),
                {LayerSpec::dense(16), LayerSpec::relu(), LayerSpec::dense(3)});
    net.init_weights(77);
    Tensor x = random_tensor({64, 4}, 5);
    std::vector<int> y(64);
    Rng rng(6);
    for (int& v : y) v = static_cast<int>(rng.below(3));
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 123;
    cfg.batch_size = 16;
    fit_tensor(net, x, y, {}, cfg);
    return net.snapshot_params();
  };
  auto a = train_once();
  auto b = train_once();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].data == b[i].data);
}

TEST_CASE("gradient check: linear model under 1e-4") {
  Network net(IOShape::flat(3), {LayerSpec::dense(4)});
  net.init_weights(21);
  Tensor batch = random_tensor({5, 3}, 22);
  std::vector<int> labels{0, 1, 2, 3, 0};
  auto r = gradient_check(net, batch, labels, 1e-3, 16, 1);
  CHECK(r.checked == 16);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("gradient check: conv+pool+dense toy network under 1e-3") {
  Network net(IOShape::image(1, 10, 10),
              {LayerSpec::conv(3, 3), LayerSpec::relu(), LayerSpec::maxpool(2),
               LayerSpec::flatten(), LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(4)});
  net.init_weights(31);
  Tensor batch = random_tensor({3, 1, 10, 10}, 32);
  std::vector<int> labels{1, 3, 0};
  auto r = gradient_check(net, batch, labels, 1e-3, 100, 2);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("gradient check: zero weights and zero input give zero error") {
  Network net(IOShape::flat(3), {LayerSpec::dense(2)});
  Tensor batch = Tensor::zeros({2, 3});
  auto r = gradient_check(net, batch, {0, 1}, 1e-3, 8, 3);
  // logits all zero -> softmax uniform; bias gradients are +-1/4, weight
  // gradients zero on both sides, so the relative error degenerates to 0.
  CHECK(r.max_rel_error < 1e-9);
}

TEST_CASE("gradient check enforces its epsilon window") {
  Network net(IOShape::flat(2), {LayerSpec::dense(2)});
  net.init_weights(4);
  Tensor batch = random_tensor({1, 2}, 5);
  CHECK_THROWS_AS(gradient_check(net, batch, {0}, 1e-5), Error);
  CHECK_THROWS_AS(gradient_check(net, batch, {0}, 0.5), Error);
}

TEST_CASE("float32 backprop agrees with a float32 finite-difference oracle on a toy net") {
  // Extracts production float gradients through an sgd step (lr 1, no
  // momentum: g = w_before - w_after) and compares them against central
  // differences computed from forward_logits at float precision.
  Network net(IOShape::image(1, 6, 6),
              {LayerSpec::conv(2, 3), LayerSpec::relu(), LayerSpec::flatten(),
               LayerSpec::dense(3)});
  net.init_weights(8);
  Tensor batch = random_tensor({2, 1, 6, 6}, 9);
  std::vector<int> labels{0, 2};

  auto before = net.snapshot_params();
  Network stepped = net;
  TrainConfig cfg;
  cfg.learning_rate = 1.0f;
  cfg.momentum = 0.0f;
  SgdOptimizer opt(stepped);
  opt.step(stepped, batch, labels, cfg);
  auto after = stepped.snapshot_params();

  auto loss_with = [&](const std::vector<Tensor>& params) {
    Network probe = net;
    probe.load_params(params);
    return cross_entropy_loss(probe.forward_logits(batch), labels).loss;
  };

  // eps large enough to clear float32 rounding in the loss, small enough
  // not to push activations across relu kinks; the 1e-2 denominator floor
  // absorbs the remaining absolute noise on near-zero gradients.
  const double eps = 1.5e-3;
  double worst = 0.0;
  Rng rng(10);
  for (int s = 0; s < 40; ++s) {
    size_t t = rng.below(before.size());
    size_t i = rng.below(before[t].data.size());
    auto params = before;
    params[t].data[i] += static_cast<float>(eps);
    double lp = loss_with(params);
    params[t].data[i] -= static_cast<float>(2 * eps);
    double lm = loss_with(params);
    double numeric = (lp - lm) / (2 * eps);
    double analytic = static_cast<double>(before[t].data[i]) - after[t].data[i];
    double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-2});
    worst = std::max(worst, std::fabs(analytic - numeric) / denom);
  }
  CHECK(worst < 1e-3);
}
