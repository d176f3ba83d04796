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

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "codistill/tensor.hpp"

namespace codistill::nn {

/// LeNet-shaped classifier: conv1 -> tanh -> avgpool -> conv2 -> tanh ->
/// avgpool -> conv3 -> fc1 -> tanh -> fc2. conv3 spans the whole pooled map
/// so its output is 1x1 per channel.
struct Architecture {
  int input_side = 32;
  int conv1_kernel = 5;
  int conv2_kernel = 5;
  int conv1_channels = 6;
  int conv2_channels = 16;
  int conv3_channels = 120;
  int fc1_width = 84;
  int classes = 2;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  int conv1_side() const { return input_side - conv1_kernel + 1; }
  int pool1_side() const { return conv1_side() / 2; }
  int conv2_side() const { return pool1_side() - conv2_kernel + 1; }
  int pool2_side() const { return conv2_side() / 2; }
  int conv3_kernel() const { return pool2_side(); }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct Parameter {
  std::string name;
  Tensor value;

  friend bool operator==(const Parameter&, const Parameter&) = default;
};

// Fixed parameter order shared by ModelState, Gradients and Velocity.
enum ParamIndex : std::size_t {
  kConv1W, kConv1B, kConv2W, kConv2B, kConv3W, kConv3B, kFc1W, kFc1B, kFc2W, kFc2B, kParamCount
};

/// Conv weights are [out, in, k, k]; fully connected weights are [in, out].
struct ModelState {
  Architecture arch;
  std::vector<Parameter> params;

  Tensor& operator[](std::size_t i) { return params[i].value; }
  const Tensor& operator[](std::size_t i) const { return params[i].value; }
  const Tensor& param(std::string_view name) const;

  std::size_t parameter_count() const;

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

/// Expected parameter shapes for an architecture, in ParamIndex order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const Architecture& arch);

/// Glorot-uniform weights, zero biases. Deterministic in (arch, seed).
ModelState init_model(const Architecture& arch, std::uint64_t seed);

ModelState zeros_like(const ModelState& model);

/// One tensor per parameter, same order and shapes as the model.
struct Gradients {
  std::vector<Tensor> tensors;

  Tensor& operator[](std::size_t i) { return tensors[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors[i]; }
  std::size_t size() const { return tensors.size(); }

  friend bool operator==(const Gradients&, const Gradients&) = default;
};

Gradients zero_gradients(const ModelState& model);

struct ForwardTrace {
  Architecture arch;
  std::size_t batch = 0;
  Tensor logits;       // [batch, classes]
  Tensor penultimate;  // [batch, fc1_width], post-tanh

  // Activations are stored channels-last: [batch, h, w, c].
  Tensor col1, act1, pool1;
  Tensor col2, act2, pool2;
  Tensor col3, conv3_out;
};

/// `batch` must be [n, 1, side, side].
ForwardTrace forward(const ModelState& model, const Tensor& batch);

/// Reverse pass. `dpenultimate` (may be null) adds a gradient arriving
/// directly at the fc1 activation on top of what flows back from the logits.
Gradients backward(const ModelState& model, const ForwardTrace& trace, const Tensor& dlogits,
                   const Tensor* dpenultimate = nullptr);

struct LossGrad {
  double loss = 0.0;
  Tensor grad;
};

Tensor softmax(const Tensor& logits);

/// Mean softmax cross-entropy over the batch; gradient w.r.t. logits.
LossGrad cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Mean of squared differences over all elements; gradient w.r.t. `a`.
LossGrad mse(const Tensor& a, const Tensor& b);

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
};

struct Velocity {
  std::vector<Tensor> tensors;

  friend bool operator==(const Velocity&, const Velocity&) = default;
};

Velocity zero_velocity(const ModelState& model);

/// v <- momentum * v + g; p <- p - lr * v. Rejects non-finite gradients
/// before touching any state.
void sgd_step(ModelState& model, const Gradients& grads, const SgdConfig& config, Velocity& velocity);

/// Central difference (f(x + eps) - f(x - eps)) / (2 eps).
double central_difference(const std::function<double(double)>& f, double x, double eps);

/// Central-difference gradient of an arbitrary scalar loss of the model.
Gradients finite_diff_gradients(const ModelState& model,
                                const std::function<double(const ModelState&)>& loss, double eps);

/// Central-difference gradient of mean cross-entropy on (batch, labels).
Gradients finite_diff_gradients(const ModelState& model, const Tensor& batch,
                                std::span<const int> labels, double eps);

/// Which vector a client exposes as its class representation.
enum class RepresentationMode { kLogits, kProbabilities, kPenultimate };

std::string_view to_string(RepresentationMode mode);
RepresentationMode parse_representation_mode(std::string_view text);

std::size_t representation_width(const Architecture& arch, RepresentationMode mode);

/// [batch, width] representation rows taken from a forward trace.
Tensor representation(const ForwardTrace& trace, RepresentationMode mode);

/// Representation rows for a large image set, forwarded in chunks.
Tensor batched_representation(const ModelState& model, const Tensor& images, RepresentationMode mode,
                              std::size_t chunk = 256);

/// Routes a gradient w.r.t. the representation into dlogits / dpenultimate.
void accumulate_representation_grad(const ForwardTrace& trace, RepresentationMode mode,
                                    const Tensor& drep, Tensor& dlogits, Tensor& dpenultimate);

/// Largest |a - b| / max(|a|, |b|, floor) over all entries.
double max_relative_error(const Gradients& a, const Gradients& b, double floor = 1e-8);

}  // namespace codistill::nn
