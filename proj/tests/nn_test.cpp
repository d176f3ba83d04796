// Copyright 2026 The Codistill Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "codistill/checkpoint.hpp"
#include "codistill/gradcheck.hpp"
#include "codistill/nn.hpp"

namespace codistill::nn {
namespace {

Tensor random_images(std::size_t n, int side, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t({n, 1, static_cast<std::size_t>(side), static_cast<std::size_t>(side)});
  for (double& v : t.data()) v = u(rng);
  return t;
}

void randomize(ModelState& model, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& p : model.params)
    for (double& v : p.value.data()) v = u(rng);
}

// Plain nested-loop LeNet forward in NCHW, written independently of the im2col path.
using Maps = std::vector<std::vector<std::vector<double>>>;  // [c][y][x]

Maps conv(const Maps& in, const Tensor& w, const Tensor& b, bool squash) {
  const std::size_t out_c = w.dim(0), in_c = w.dim(1), k = w.dim(2);
  const std::size_t side = in[0].size() - k + 1;
  Maps out(out_c, std::vector<std::vector<double>>(side, std::vector<double>(side)));
  for (std::size_t o = 0; o < out_c; ++o)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        double s = b[o];
        for (std::size_t i = 0; i < in_c; ++i)
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx)
              s += w[((o * in_c + i) * k + dy) * k + dx] * in[i][y + dy][x + dx];
        out[o][y][x] = squash ? std::tanh(s) : s;
      }
  return out;
}

Maps pool(const Maps& in) {
  const std::size_t side = in[0].size() / 2;
  Maps out(in.size(), std::vector<std::vector<double>>(side, std::vector<double>(side)));
  for (std::size_t c = 0; c < in.size(); ++c)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x)
        out[c][y][x] = 0.25 * (in[c][2 * y][2 * x] + in[c][2 * y + 1][2 * x] + in[c][2 * y][2 * x + 1] +
                               in[c][2 * y + 1][2 * x + 1]);
  return out;
}

std::vector<double> dense(const std::vector<double>& in, const Tensor& w, const Tensor& b, bool squash) {
  std::vector<double> out(w.dim(1));
  for (std::size_t o = 0; o < out.size(); ++o) {
    double s = b[o];
    for (std::size_t i = 0; i < in.size(); ++i) s += in[i] * w[i * out.size() + o];
    out[o] = squash ? std::tanh(s) : s;
  }
  return out;
}

std::vector<double> reference_logits(const ModelState& m, const Tensor& images, std::size_t n) {
  const std::size_t side = images.dim(2);
  Maps x(1, std::vector<std::vector<double>>(side, std::vector<double>(side)));
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t c = 0; c < side; ++c) x[0][y][c] = images[(n * side + y) * side + c];
  Maps h = pool(conv(x, m[kConv1W], m[kConv1B], true));
  h = pool(conv(h, m[kConv2W], m[kConv2B], true));
  h = conv(h, m[kConv3W], m[kConv3B], false);
  std::vector<double> flat;
  for (const auto& c : h) flat.push_back(c[0][0]);
  return dense(dense(flat, m[kFc1W], m[kFc1B], true), m[kFc2W], m[kFc2B], false);
}

TEST(Init, SameSeedSameWeights) {
  Architecture arch;
  EXPECT_EQ(init_model(arch, 7), init_model(arch, 7));
  EXPECT_NE(init_model(arch, 7), init_model(arch, 8));
}

TEST(Init, DefaultLayout) {
  const ModelState m = init_model(Architecture{}, 0);
  EXPECT_EQ(m.param("fc2.weight").shape(), (Shape{84, 2}));
  EXPECT_EQ(m.param("conv1.weight").shape(), (Shape{6, 1, 5, 5}));
  EXPECT_EQ(m.param("conv3.weight").shape(), (Shape{120, 16, 5, 5}));
  for (const char* bias : {"conv1.bias", "conv2.bias", "conv3.bias", "fc1.bias", "fc2.bias"})
    for (double v : m.param(bias).data()) EXPECT_EQ(v, 0.0);
  // Glorot bound for fc2: sqrt(6 / (84 + 2)).
  const double bound = std::sqrt(6.0 / 86.0);
  for (double v : m.param("fc2.weight").data()) EXPECT_LE(std::abs(v), bound);
}

TEST(Init, RejectsBadArchitecture) {
  Architecture a;
  a.classes = 1;
  EXPECT_THROW(init_model(a, 0), std::invalid_argument);
  a = Architecture{};
  a.input_side = 8;
  EXPECT_THROW(init_model(a, 0), std::invalid_argument);
}

TEST(Forward, ZeroWeightsGiveZeroLogits) {
  const ModelState m = zeros_like(init_model(Architecture{}, 0));
  const ForwardTrace t = forward(m, random_images(3, 32, 1));
  for (double v : t.logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, LogitShape) {
  Architecture arch;
  arch.classes = 3;
  const ForwardTrace t = forward(init_model(arch, 0), random_images(4, 32, 1));
  EXPECT_EQ(t.logits.shape(), (Shape{4, 3}));
  EXPECT_EQ(t.penultimate.shape(), (Shape{4, 84}));
}

TEST(Forward, RejectsWrongInputSize) {
  const ModelState m = init_model(Architecture{}, 0);
  try {
    forward(m, random_images(2, 28, 0));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("28"), std::string::npos);
  }
}

TEST(Forward, MatchesNestedLoopReference) {
  for (std::uint64_t seed : {1u, 2u}) {
    ModelState m = init_model(Architecture{}, seed);
    randomize(m, seed + 100, 0.2);
    const Tensor images = random_images(3, 32, seed);
    const ForwardTrace t = forward(m, images);
    for (std::size_t n = 0; n < 3; ++n) {
      const auto ref = reference_logits(m, images, n);
      for (std::size_t j = 0; j < ref.size(); ++j) EXPECT_NEAR(t.logits[n * 2 + j], ref[j], 1e-10);
    }
  }
}

TEST(CrossEntropy, UniformLogitsGiveLn2) {
  const LossGrad l = cross_entropy(Tensor({1, 2}, {0.0, 0.0}), std::vector<int>{0});
  EXPECT_NEAR(l.loss, std::log(2.0), 1e-12);
}

TEST(CrossEntropy, HugeLogitsStayFinite) {
  const LossGrad l = cross_entropy(Tensor({1, 2}, {1000.0, 0.0}), std::vector<int>{1});
  EXPECT_NEAR(l.loss, 1000.0, 1e-9);
  EXPECT_TRUE(l.grad.all_finite());
  const LossGrad r = cross_entropy(Tensor({1, 2}, {1000.0, 0.0}), std::vector<int>{0});
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  const std::vector<int> labels{0, 2};
  Tensor z({2, 3}, {0.3, -1.2, 2.0, 0.5, 0.1, -0.7});
  const LossGrad l = cross_entropy(z, labels);
  for (std::size_t i = 0; i < z.numel(); ++i) {
    const double fd = central_difference(
        [&](double v) {
          Tensor y = z;
          y[i] = v;
          return cross_entropy(y, labels).loss;
        },
        z[i], 1e-6);
    EXPECT_NEAR(l.grad[i], fd, 1e-6);
  }
}

TEST(CrossEntropy, RejectsBadLabels) {
  EXPECT_THROW(cross_entropy(Tensor({1, 2}), std::vector<int>{2}), std::invalid_argument);
  EXPECT_THROW(cross_entropy(Tensor({2, 2}), std::vector<int>{0}), std::invalid_argument);
}

TEST(Mse, HandValues) {
  EXPECT_EQ(mse(Tensor({2}, {1.0, 2.0}), Tensor({2}, {1.0, 2.0})).loss, 0.0);
  EXPECT_NEAR(mse(Tensor({2}, {0.0, 0.0}), Tensor({2}, {1.0, 3.0})).loss, 5.0, 1e-12);
  const LossGrad g = mse(Tensor({2}, {0.0, 0.0}), Tensor({2}, {1.0, 3.0}));
  EXPECT_NEAR(g.grad[0], -1.0, 1e-12);
  EXPECT_NEAR(g.grad[1], -3.0, 1e-12);
  EXPECT_THROW(mse(Tensor({2}), Tensor({3})), std::invalid_argument);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const ModelState m = init_model(Architecture{}, 3);
  const ForwardTrace t = forward(m, random_images(2, 32, 3));
  const Gradients g = backward(m, t, Tensor(t.logits.shape()));
  EXPECT_EQ(g, zero_gradients(m));
}

TEST(Backward, MatchesFiniteDifferencesOnTinyConfigs) {
  for (const auto& r : gradient_check_suite(5, 11)) EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(Backward, DuplicatedRowKeepsGradient) {
  Architecture arch;
  arch.input_side = 8;
  arch.conv1_kernel = 3;
  arch.conv2_kernel = 2;
  arch.conv1_channels = 2;
  arch.conv2_channels = 2;
  arch.conv3_channels = 3;
  arch.fc1_width = 4;
  ModelState m = init_model(arch, 5);
  randomize(m, 6);
  const Tensor one = random_images(1, 8, 9);
  Tensor two({2, 1, 8, 8});
  for (std::size_t i = 0; i < 64; ++i) two[i] = two[64 + i] = one[i];
  const std::vector<int> l1{1}, l2{1, 1};
  const ForwardTrace t1 = forward(m, one), t2 = forward(m, two);
  const Gradients g1 = backward(m, t1, cross_entropy(t1.logits, l1).grad);
  const Gradients g2 = backward(m, t2, cross_entropy(t2.logits, l2).grad);
  EXPECT_LT(max_relative_error(g1, g2), 1e-12);
}

TEST(Backward, PenultimateAndProbabilityPathsMatchFiniteDifferences) {
  Architecture arch;
  arch.input_side = 8;
  arch.conv1_kernel = 3;
  arch.conv2_kernel = 2;
  arch.conv1_channels = 2;
  arch.conv2_channels = 3;
  arch.conv3_channels = 4;
  arch.fc1_width = 5;
  arch.classes = 3;
  ModelState m = init_model(arch, 2);
  randomize(m, 3);
  const Tensor x = random_images(2, 8, 4);
  const std::vector<int> labels{0, 2};
  for (auto mode : {RepresentationMode::kLogits, RepresentationMode::kProbabilities,
                    RepresentationMode::kPenultimate}) {
    const std::size_t w = representation_width(arch, mode);
    Tensor target({2, w});
    for (std::size_t i = 0; i < target.numel(); ++i) target[i] = 0.1 * static_cast<double>(i % 5) - 0.2;
    auto loss = [&](const ModelState& s) {
      const ForwardTrace t = forward(s, x);
      return cross_entropy(t.logits, labels).loss + 0.7 * mse(representation(t, mode), target).loss;
    };
    const ForwardTrace t = forward(m, x);
    LossGrad ce = cross_entropy(t.logits, labels);
    LossGrad d = mse(representation(t, mode), target);
    for (double& v : d.grad.data()) v *= 0.7;
    Tensor dpen(t.penultimate.shape());
    accumulate_representation_grad(t, mode, d.grad, ce.grad, dpen);
    const Gradients analytic = backward(m, t, ce.grad, &dpen);
    EXPECT_LT(max_relative_error(analytic, finite_diff_gradients(m, loss, 1e-6)), 1e-4) << to_string(mode);
  }
}

TEST(Sgd, PlainStep) {
  Architecture arch;
  ModelState m = init_model(arch, 0);
  for (auto& p : m.params) p.value.fill(1.0);
  Gradients g = zero_gradients(m);
  for (auto& t : g.tensors) t.fill(0.5);
  Velocity v = zero_velocity(m);
  sgd_step(m, g, {0.1, 0.0}, v);
  for (const auto& p : m.params)
    for (double x : p.value.data()) EXPECT_NEAR(x, 0.95, 1e-15);
}

TEST(Sgd, MomentumRecurrence) {
  ModelState m = init_model(Architecture{}, 0);
  for (auto& p : m.params) p.value.fill(1.0);
  Gradients g = zero_gradients(m);
  Velocity v = zero_velocity(m);
  for (auto& t : g.tensors) t.fill(0.5);
  sgd_step(m, g, {0.1, 0.9}, v);
  for (auto& t : g.tensors) t.fill(-0.2);
  sgd_step(m, g, {0.1, 0.9}, v);
  // v1 = 0.5, p1 = 0.95; v2 = 0.45 - 0.2 = 0.25, p2 = 0.925.
  EXPECT_NEAR(m[kFc2W][0], 0.925, 1e-15);
  EXPECT_NEAR(v.tensors[kFc2W][0], 0.25, 1e-15);
}

TEST(Sgd, RejectsNonFiniteGradientWithoutMutating) {
  ModelState m = init_model(Architecture{}, 0);
  const ModelState before = m;
  Gradients g = zero_gradients(m);
  g[kFc1B][0] = std::nan("");
  Velocity v = zero_velocity(m);
  EXPECT_THROW(sgd_step(m, g, {}, v), std::domain_error);
  EXPECT_EQ(m, before);
  EXPECT_THROW(sgd_step(m, zero_gradients(m), {0.0, 0.9}, v), std::invalid_argument);
}

TEST(FiniteDifference, Quadratic) {
  EXPECT_NEAR(central_difference([](double p) { return p * p; }, 3.0, 1e-4), 6.0, 1e-6);
  EXPECT_THROW(central_difference([](double p) { return p; }, 0.0, 0.0), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsExact) {
  ModelState m = init_model(Architecture{}, 4);
  randomize(m, 5);
  m[kFc2B][0] = -0.0;
  m[kFc2B][1] = 1e-300;
  const auto bytes = encode_checkpoint(m);
  const ModelState back = decode_checkpoint(bytes);
  EXPECT_EQ(back, m);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_TRUE(std::signbit(back[kFc2B][0]));

  const auto path = std::filesystem::temp_directory_path() / "codistill_ckpt_test.bin";
  save_checkpoint(m, path);
  EXPECT_EQ(load_checkpoint(path), m);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptInput) {
  auto bytes = encode_checkpoint(init_model(Architecture{}, 0));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), std::runtime_error);
  bad = bytes;
  bad.pop_back();
  EXPECT_THROW(decode_checkpoint(bad), std::runtime_error);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(decode_checkpoint(bad), std::runtime_error);
}

}  // namespace
}  // namespace codistill::nn
