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

#include "codistill/gradcheck.hpp"

namespace codistill::nn {

Architecture random_tiny_architecture(Rng& rng) {
  const auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  Architecture a;
  a.input_side = 8;
  a.conv1_kernel = pick(2, 4);
  // 8 - k1 + 1 pools to 3 for k1 <= 3 and to 2 for k1 = 4.
  a.conv2_kernel = a.conv1_kernel == 4 ? 1 : pick(1, 2);
  a.conv1_channels = pick(1, 3);
  a.conv2_channels = pick(1, 3);
  a.conv3_channels = pick(2, 5);
  a.fc1_width = pick(3, 8);
  a.classes = pick(2, 4);
  a.validate();
  return a;
}

GradCheckResult gradient_check(const Architecture& arch, std::uint64_t seed, std::size_t batch, double eps) {
  Rng rng(seed);
  ModelState model = init_model(arch, seed);
  std::uniform_real_distribution<double> bias(-0.5, 0.5), pixel(0.0, 1.0);
  for (std::size_t i : {kConv1B, kConv2B, kConv3B, kFc1B, kFc2B})
    for (double& v : model[i].data()) v = bias(rng);

  const auto side = static_cast<std::size_t>(arch.input_side);
  Tensor images({batch, 1, side, side});
  for (double& v : images.data()) v = pixel(rng);
  std::vector<int> labels(batch);
  std::uniform_int_distribution<int> label(0, arch.classes - 1);
  for (int& y : labels) y = label(rng);

  const ForwardTrace trace = forward(model, images);
  const Gradients analytic = backward(model, trace, cross_entropy(trace.logits, labels).grad);
  const Gradients numeric = finite_diff_gradients(model, images, labels, eps);
  return {arch, model.parameter_count(), max_relative_error(analytic, numeric)};
}

std::vector<GradCheckResult> gradient_check_suite(int count, std::uint64_t seed) {
  std::vector<GradCheckResult> out;
  for (int i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(i)});
    const Architecture arch = random_tiny_architecture(rng);
    out.push_back(gradient_check(arch, derive_seed(seed, {static_cast<std::uint64_t>(i), 1})));
  }
  return out;
}

}  // namespace codistill::nn
