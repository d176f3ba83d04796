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

#include "codistill/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

#include "codistill/rng.hpp"

namespace codistill::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

struct ConvGeom {
  std::size_t batch, in_side, in_ch, kernel, out_side, out_ch;
  std::size_t patch() const { return in_ch * kernel * kernel; }
  std::size_t positions() const { return batch * out_side * out_side; }
};

// Input is channels-last [batch, side, side, ch]. Column row per output
// position, entries ordered (ci, ky, kx) to match [out, in, k, k] weights.
void im2col(const Tensor& input, const ConvGeom& g, Tensor& col) {
  col = Tensor({g.positions(), g.patch()});
  double* dst = col.data().data();
  const double* src = input.data().data();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oy = 0; oy < g.out_side; ++oy)
      for (std::size_t ox = 0; ox < g.out_side; ++ox)
        for (std::size_t ci = 0; ci < g.in_ch; ++ci)
          for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            const double* line = src + ((b * g.in_side + oy + ky) * g.in_side + ox) * g.in_ch + ci;
            for (std::size_t kx = 0; kx < g.kernel; ++kx) *dst++ = line[kx * g.in_ch];
          }
}

void col2im(const Tensor& dcol, const ConvGeom& g, Tensor& dinput) {
  dinput = Tensor({g.batch, g.in_side, g.in_side, g.in_ch});
  const double* src = dcol.data().data();
  double* dst = dinput.data().data();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oy = 0; oy < g.out_side; ++oy)
      for (std::size_t ox = 0; ox < g.out_side; ++ox)
        for (std::size_t ci = 0; ci < g.in_ch; ++ci)
          for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            double* line = dst + ((b * g.in_side + oy + ky) * g.in_side + ox) * g.in_ch + ci;
            for (std::size_t kx = 0; kx < g.kernel; ++kx) line[kx * g.in_ch] += *src++;
          }
}

Tensor conv_forward(const Tensor& col, const ConvGeom& g, const Tensor& weight, const Tensor& bias) {
  Tensor out({g.batch, g.out_side, g.out_side, g.out_ch});
  auto o = as_matrix(out, g.positions(), g.out_ch);
  o.noalias() = as_matrix(col, g.positions(), g.patch()) * as_matrix(weight, g.out_ch, g.patch()).transpose();
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), static_cast<Eigen::Index>(g.out_ch));
  return out;
}

// Returns gradient w.r.t. the input (channels-last) and fills dW, db.
Tensor conv_backward(const Tensor& dout, const Tensor& col, const ConvGeom& g, const Tensor& weight,
                     Tensor& dweight, Tensor& dbias, bool need_input_grad) {
  auto d = as_matrix(dout, g.positions(), g.out_ch);
  as_matrix(dweight, g.out_ch, g.patch()).noalias() = d.transpose() * as_matrix(col, g.positions(), g.patch());
  Eigen::Map<Eigen::RowVectorXd>(dbias.data().data(), static_cast<Eigen::Index>(g.out_ch)) = d.colwise().sum();
  if (!need_input_grad) return {};
  Tensor dcol({g.positions(), g.patch()});
  as_matrix(dcol, g.positions(), g.patch()).noalias() = d * as_matrix(weight, g.out_ch, g.patch());
  Tensor dinput;
  col2im(dcol, g, dinput);
  return dinput;
}

void tanh_inplace(Tensor& t) {
  for (double& v : t.data()) v = std::tanh(v);
}

// d/dx tanh given y = tanh(x): 1 - y^2.
void tanh_backward_inplace(Tensor& grad, const Tensor& activated) {
  auto g = grad.data();
  auto y = activated.data();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - y[i] * y[i];
}

Tensor avgpool_forward(const Tensor& in, std::size_t batch, std::size_t side, std::size_t ch) {
  const std::size_t out_side = side / 2;
  Tensor out({batch, out_side, out_side, ch});
  const double* src = in.data().data();
  double* dst = out.data().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t y = 0; y < out_side; ++y)
      for (std::size_t x = 0; x < out_side; ++x)
        for (std::size_t c = 0; c < ch; ++c) {
          const auto at = [&](std::size_t yy, std::size_t xx) { return src[((b * side + yy) * side + xx) * ch + c]; };
          *dst++ = 0.25 * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1));
        }
  return out;
}

// Rows/columns dropped by floor(side / 2) receive zero gradient.
Tensor avgpool_backward(const Tensor& dout, std::size_t batch, std::size_t side, std::size_t ch) {
  const std::size_t out_side = side / 2;
  Tensor din({batch, side, side, ch});
  const double* src = dout.data().data();
  double* dst = din.data().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t y = 0; y < out_side; ++y)
      for (std::size_t x = 0; x < out_side; ++x)
        for (std::size_t c = 0; c < ch; ++c) {
          const double g = 0.25 * *src++;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) dst[((b * side + 2 * y + dy) * side + 2 * x + dx) * ch + c] += g;
        }
  return din;
}

struct Geometry {
  ConvGeom c1, c2, c3;
};

Geometry geometry(const Architecture& a, std::size_t batch) {
  const auto u = [](int v) { return static_cast<std::size_t>(v); };
  return Geometry{
      {batch, u(a.input_side), 1, u(a.conv1_kernel), u(a.conv1_side()), u(a.conv1_channels)},
      {batch, u(a.pool1_side()), u(a.conv1_channels), u(a.conv2_kernel), u(a.conv2_side()), u(a.conv2_channels)},
      {batch, u(a.pool2_side()), u(a.conv2_channels), u(a.conv3_kernel()), 1, u(a.conv3_channels)},
  };
}

void check_congruent(const ModelState& model, const std::vector<Tensor>& tensors, const char* what) {
  require(tensors.size() == model.params.size(), std::string(what) + ": tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i)
    require(tensors[i].shape() == model.params[i].value.shape(),
            std::string(what) + ": shape mismatch for " + model.params[i].name + ", expected " +
                shape_string(model.params[i].value.shape()) + ", got " + shape_string(tensors[i].shape()));
}

}  // namespace

void Architecture::validate() const {
  const auto positive = [](int v, const char* name) {
    require(v > 0, std::string("architecture: ") + name + " must be positive, got " + std::to_string(v));
  };
  positive(input_side, "input_side");
  positive(conv1_kernel, "conv1_kernel");
  positive(conv2_kernel, "conv2_kernel");
  positive(conv1_channels, "conv1_channels");
  positive(conv2_channels, "conv2_channels");
  positive(conv3_channels, "conv3_channels");
  positive(fc1_width, "fc1_width");
  require(classes >= 2, "architecture: classes must be >= 2, got " + std::to_string(classes));
  require(conv1_side() >= 2, "architecture: conv1_kernel too large for input_side");
  require(conv2_side() >= 2, "architecture: conv2_kernel too large for pooled conv1 map");
  require(conv3_kernel() >= 1, "architecture: no spatial extent left for conv3");
}

const Tensor& ModelState::param(std::string_view name) const {
  for (const auto& p : params)
    if (p.name == name) return p.value;
  throw std::out_of_range("no parameter named " + std::string(name));
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const Architecture& a) {
  a.validate();
  const auto u = [](int v) { return static_cast<std::size_t>(v); };
  const std::size_t k3 = u(a.conv3_kernel());
  return {
      {"conv1.weight", {u(a.conv1_channels), 1, u(a.conv1_kernel), u(a.conv1_kernel)}},
      {"conv1.bias", {u(a.conv1_channels)}},
      {"conv2.weight", {u(a.conv2_channels), u(a.conv1_channels), u(a.conv2_kernel), u(a.conv2_kernel)}},
      {"conv2.bias", {u(a.conv2_channels)}},
      {"conv3.weight", {u(a.conv3_channels), u(a.conv2_channels), k3, k3}},
      {"conv3.bias", {u(a.conv3_channels)}},
      {"fc1.weight", {u(a.conv3_channels), u(a.fc1_width)}},
      {"fc1.bias", {u(a.fc1_width)}},
      {"fc2.weight", {u(a.fc1_width), u(a.classes)}},
      {"fc2.bias", {u(a.classes)}},
  };
}

ModelState init_model(const Architecture& arch, std::uint64_t seed) {
  ModelState model{arch, {}};
  Rng rng = make_rng(seed, {stream::kInit});
  for (auto& [name, shape] : parameter_layout(arch)) {
    Tensor t(shape);
    if (shape.size() > 1) {
      double fan_in, fan_out;
      if (shape.size() == 4) {
        const double receptive = static_cast<double>(shape[2] * shape[3]);
        fan_in = static_cast<double>(shape[1]) * receptive;
        fan_out = static_cast<double>(shape[0]) * receptive;
      } else {
        fan_in = static_cast<double>(shape[0]);
        fan_out = static_cast<double>(shape[1]);
      }
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (double& v : t.data()) v = dist(rng);
    }
    model.params.push_back({name, std::move(t)});
  }
  return model;
}

ModelState zeros_like(const ModelState& model) {
  ModelState out = model;
  for (auto& p : out.params) p.value.fill(0.0);
  return out;
}

Gradients zero_gradients(const ModelState& model) {
  Gradients g;
  for (const auto& p : model.params) g.tensors.emplace_back(p.value.shape());
  return g;
}

Velocity zero_velocity(const ModelState& model) {
  Velocity v;
  for (const auto& p : model.params) v.tensors.emplace_back(p.value.shape());
  return v;
}

ForwardTrace forward(const ModelState& model, const Tensor& batch) {
  const Architecture& a = model.arch;
  a.validate();
  const auto side = static_cast<std::size_t>(a.input_side);
  if (batch.rank() != 4 || batch.dim(1) != 1 || batch.dim(2) != side || batch.dim(3) != side)
    throw std::invalid_argument("forward: expected input [n,1," + std::to_string(side) + "," +
                                std::to_string(side) + "], got " + shape_string(batch.shape()));
  require(model.params.size() == kParamCount, "forward: model has wrong parameter count");

  ForwardTrace tr;
  tr.arch = a;
  tr.batch = batch.dim(0);
  const Geometry g = geometry(a, tr.batch);

  // [n,1,H,W] and [n,H,W,1] share a memory layout.
  im2col(batch, g.c1, tr.col1);
  tr.act1 = conv_forward(tr.col1, g.c1, model[kConv1W], model[kConv1B]);
  tanh_inplace(tr.act1);
  tr.pool1 = avgpool_forward(tr.act1, tr.batch, g.c1.out_side, g.c1.out_ch);

  im2col(tr.pool1, g.c2, tr.col2);
  tr.act2 = conv_forward(tr.col2, g.c2, model[kConv2W], model[kConv2B]);
  tanh_inplace(tr.act2);
  tr.pool2 = avgpool_forward(tr.act2, tr.batch, g.c2.out_side, g.c2.out_ch);

  im2col(tr.pool2, g.c3, tr.col3);
  tr.conv3_out = conv_forward(tr.col3, g.c3, model[kConv3W], model[kConv3B]);

  const auto c3 = static_cast<std::size_t>(a.conv3_channels);
  const auto f1 = static_cast<std::size_t>(a.fc1_width);
  const auto classes = static_cast<std::size_t>(a.classes);

  tr.penultimate = Tensor({tr.batch, f1});
  auto h = as_matrix(tr.penultimate, tr.batch, f1);
  h.noalias() = as_matrix(tr.conv3_out, tr.batch, c3) * as_matrix(model[kFc1W], c3, f1);
  h.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(model[kFc1B].data().data(), static_cast<Eigen::Index>(f1));
  tanh_inplace(tr.penultimate);

  tr.logits = Tensor({tr.batch, classes});
  auto z = as_matrix(tr.logits, tr.batch, classes);
  z.noalias() = as_matrix(tr.penultimate, tr.batch, f1) * as_matrix(model[kFc2W], f1, classes);
  z.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(model[kFc2B].data().data(), static_cast<Eigen::Index>(classes));
  return tr;
}

Gradients backward(const ModelState& model, const ForwardTrace& trace, const Tensor& dlogits,
                   const Tensor* dpenultimate) {
  const Architecture& a = model.arch;
  require(trace.arch == a && trace.batch > 0 && trace.logits.rank() == 2,
          "backward: trace was not produced by a model with this architecture");
  require(dlogits.shape() == trace.logits.shape(), "backward: dlogits shape " + shape_string(dlogits.shape()) +
                                                        " does not match logits " + shape_string(trace.logits.shape()));
  if (dpenultimate)
    require(dpenultimate->shape() == trace.penultimate.shape(), "backward: dpenultimate shape mismatch");

  const std::size_t n = trace.batch;
  const auto c3 = static_cast<std::size_t>(a.conv3_channels);
  const auto f1 = static_cast<std::size_t>(a.fc1_width);
  const auto classes = static_cast<std::size_t>(a.classes);
  const Geometry g = geometry(a, n);
  Gradients grads = zero_gradients(model);

  auto dz = as_matrix(dlogits, n, classes);
  as_matrix(grads[kFc2W], f1, classes).noalias() = as_matrix(trace.penultimate, n, f1).transpose() * dz;
  Eigen::Map<Eigen::RowVectorXd>(grads[kFc2B].data().data(), static_cast<Eigen::Index>(classes)) = dz.colwise().sum();

  Tensor dh({n, f1});
  as_matrix(dh, n, f1).noalias() = dz * as_matrix(model[kFc2W], f1, classes).transpose();
  if (dpenultimate) as_matrix(dh, n, f1) += as_matrix(*dpenultimate, n, f1);
  tanh_backward_inplace(dh, trace.penultimate);

  auto dhm = as_matrix(dh, n, f1);
  as_matrix(grads[kFc1W], c3, f1).noalias() = as_matrix(trace.conv3_out, n, c3).transpose() * dhm;
  Eigen::Map<Eigen::RowVectorXd>(grads[kFc1B].data().data(), static_cast<Eigen::Index>(f1)) = dhm.colwise().sum();

  Tensor dconv3({n, 1, 1, c3});
  as_matrix(dconv3, n, c3).noalias() = dhm * as_matrix(model[kFc1W], c3, f1).transpose();

  Tensor dpool2 = conv_backward(dconv3, trace.col3, g.c3, model[kConv3W], grads[kConv3W], grads[kConv3B], true);
  Tensor dact2 = avgpool_backward(dpool2, n, g.c2.out_side, g.c2.out_ch);
  tanh_backward_inplace(dact2, trace.act2);

  Tensor dpool1 = conv_backward(dact2, trace.col2, g.c2, model[kConv2W], grads[kConv2W], grads[kConv2B], true);
  Tensor dact1 = avgpool_backward(dpool1, n, g.c1.out_side, g.c1.out_ch);
  tanh_backward_inplace(dact1, trace.act1);

  conv_backward(dact1, trace.col1, g.c1, model[kConv1W], grads[kConv1W], grads[kConv1B], false);
  return grads;
}

Tensor softmax(const Tensor& logits) {
  require(logits.rank() == 2, "softmax: expected [batch, classes], got " + shape_string(logits.shape()));
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    auto z = logits.row(i);
    auto p = out.row(i);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) sum += (p[j] = std::exp(z[j] - m));
    for (double& v : p) v /= sum;
  }
  return out;
}

LossGrad cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require(logits.rank() == 2, "cross_entropy: expected [batch, classes], got " + shape_string(logits.shape()));
  const std::size_t n = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  require(labels.size() == n, "cross_entropy: label count " + std::to_string(labels.size()) +
                                  " does not match batch " + std::to_string(n));
  LossGrad out{0.0, Tensor(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    require(y >= 0 && static_cast<std::size_t>(y) < classes,
            "cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(classes) + ")");
    auto z = logits.row(i);
    auto d = out.grad.row(i);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < classes; ++j) sum += std::exp(z[j] - m);
    const double log_sum = m + std::log(sum);
    out.loss += (log_sum - z[static_cast<std::size_t>(y)]) * inv_n;
    for (std::size_t j = 0; j < classes; ++j) d[j] = std::exp(z[j] - log_sum) * inv_n;
    d[static_cast<std::size_t>(y)] -= inv_n;
  }
  return out;
}

LossGrad mse(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "mse: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  LossGrad out{0.0, Tensor(a.shape())};
  const double inv = 1.0 / static_cast<double>(a.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    out.loss += d * d;
    out.grad[i] = 2.0 * d * inv;
  }
  out.loss *= inv;
  return out;
}

void sgd_step(ModelState& model, const Gradients& grads, const SgdConfig& config, Velocity& velocity) {
  require(config.lr > 0.0, "sgd_step: learning rate must be positive");
  require(config.momentum >= 0.0 && config.momentum < 1.0, "sgd_step: momentum must be in [0,1)");
  check_congruent(model, grads.tensors, "sgd_step gradients");
  check_congruent(model, velocity.tensors, "sgd_step velocity");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!grads[i].all_finite())
      throw std::domain_error("sgd_step: non-finite gradient in " + model.params[i].name);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto p = model[i].data();
    auto v = velocity.tensors[i].data();
    auto gr = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = config.momentum * v[j] + gr[j];
      p[j] -= config.lr * v[j];
    }
  }
}

double central_difference(const std::function<double(double)>& f, double x, double eps) {
  require(eps > 0.0 && std::isfinite(eps), "central_difference: eps must be positive and finite");
  return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

Gradients finite_diff_gradients(const ModelState& model, const std::function<double(const ModelState&)>& loss,
                                double eps) {
  require(eps > 0.0 && std::isfinite(eps), "finite_diff_gradients: eps must be positive and finite");
  ModelState probe = model;
  Gradients grads = zero_gradients(model);
  for (std::size_t i = 0; i < probe.params.size(); ++i) {
    for (std::size_t j = 0; j < probe[i].numel(); ++j) {
      const double original = probe[i][j];
      grads[i][j] = central_difference(
          [&](double v) {
            probe[i][j] = v;
            return loss(probe);
          },
          original, eps);
      probe[i][j] = original;
    }
  }
  return grads;
}

Gradients finite_diff_gradients(const ModelState& model, const Tensor& batch, std::span<const int> labels,
                                double eps) {
  return finite_diff_gradients(
      model, [&](const ModelState& m) { return cross_entropy(forward(m, batch).logits, labels).loss; }, eps);
}

std::string_view to_string(RepresentationMode mode) {
  switch (mode) {
    case RepresentationMode::kLogits: return "logits";
    case RepresentationMode::kProbabilities: return "probabilities";
    case RepresentationMode::kPenultimate: return "penultimate";
  }
  return "?";
}

RepresentationMode parse_representation_mode(std::string_view text) {
  if (text == "logits") return RepresentationMode::kLogits;
  if (text == "probabilities") return RepresentationMode::kProbabilities;
  if (text == "penultimate") return RepresentationMode::kPenultimate;
  throw std::invalid_argument("unknown representation mode '" + std::string(text) +
                              "' (expected logits, probabilities or penultimate)");
}

std::size_t representation_width(const Architecture& arch, RepresentationMode mode) {
  return static_cast<std::size_t>(mode == RepresentationMode::kPenultimate ? arch.fc1_width : arch.classes);
}

Tensor representation(const ForwardTrace& trace, RepresentationMode mode) {
  switch (mode) {
    case RepresentationMode::kLogits: return trace.logits;
    case RepresentationMode::kProbabilities: return softmax(trace.logits);
    case RepresentationMode::kPenultimate: return trace.penultimate;
  }
  throw std::logic_error("unreachable representation mode");
}

Tensor batched_representation(const ModelState& model, const Tensor& images, RepresentationMode mode,
                              std::size_t chunk) {
  require(images.rank() == 4, "batched_representation: expected [n,1,side,side] images");
  require(chunk > 0, "batched_representation: chunk must be positive");
  const std::size_t n = images.dim(0);
  Tensor out({n, representation_width(model.arch, mode)});
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += chunk) {
    rows.clear();
    for (std::size_t i = start; i < std::min(n, start + chunk); ++i) rows.push_back(i);
    const Tensor rep = representation(forward(model, gather_rows(images, rows)), mode);
    std::copy(rep.data().begin(), rep.data().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(start * out.row_size()));
  }
  return out;
}

void accumulate_representation_grad(const ForwardTrace& trace, RepresentationMode mode, const Tensor& drep,
                                    Tensor& dlogits, Tensor& dpenultimate) {
  switch (mode) {
    case RepresentationMode::kLogits:
      require(drep.shape() == dlogits.shape(), "representation grad shape mismatch");
      for (std::size_t i = 0; i < drep.numel(); ++i) dlogits[i] += drep[i];
      return;
    case RepresentationMode::kPenultimate:
      require(drep.shape() == dpenultimate.shape(), "representation grad shape mismatch");
      for (std::size_t i = 0; i < drep.numel(); ++i) dpenultimate[i] += drep[i];
      return;
    case RepresentationMode::kProbabilities: {
      require(drep.shape() == dlogits.shape(), "representation grad shape mismatch");
      const Tensor p = softmax(trace.logits);
      for (std::size_t r = 0; r < p.dim(0); ++r) {
        auto pr = p.row(r);
        auto gr = drep.row(r);
        double dot = 0.0;
        for (std::size_t j = 0; j < pr.size(); ++j) dot += gr[j] * pr[j];
        auto out = dlogits.row(r);
        for (std::size_t j = 0; j < pr.size(); ++j) out[j] += pr[j] * (gr[j] - dot);
      }
      return;
    }
  }
}

double max_relative_error(const Gradients& a, const Gradients& b, double floor) {
  require(a.size() == b.size(), "max_relative_error: gradient sets differ in size");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(a[i].shape() == b[i].shape(), "max_relative_error: shape mismatch");
    for (std::size_t j = 0; j < a[i].numel(); ++j) {
      const double denom = std::max({std::abs(a[i][j]), std::abs(b[i][j]), floor});
      worst = std::max(worst, std::abs(a[i][j] - b[i][j]) / denom);
    }
  }
  return worst;
}

}  // namespace codistill::nn
