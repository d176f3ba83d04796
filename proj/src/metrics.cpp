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

#include "codistill/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace codistill::metrics {

std::vector<int> predict(const nn::ModelState& model, const Tensor& images) {
  const Tensor logits = nn::batched_representation(model, images, nn::RepresentationMode::kLogits);
  std::vector<int> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto row = logits.row(i);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Confusion confusion_counts(std::span<const int> truth, std::span<const int> predicted, int classes) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("confusion_counts: length mismatch");
  const auto n = static_cast<std::size_t>(classes);
  Confusion m(n, std::vector<std::size_t>(n, 0));
  for (std::size_t i = 0; i < truth.size(); ++i)
    ++m.at(static_cast<std::size_t>(truth[i])).at(static_cast<std::size_t>(predicted[i]));
  return m;
}

double minority_accuracy(const nn::ModelState& model, const data::Dataset& eval, int minority) {
  const auto idx = eval.indices_of(minority);
  if (idx.empty())
    throw std::invalid_argument("minority_accuracy: eval set has no images of class " + std::to_string(minority));
  const auto pred = predict(model, gather_rows(eval.images, idx));
  const auto correct = std::count(pred.begin(), pred.end(), minority);
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

EvalReport evaluate_run(std::span<const fed::ClientState> clients, const data::Dataset& eval) {
  if (clients.empty()) throw std::invalid_argument("evaluate_run: no clients");
  EvalReport report;
  for (const auto& c : clients) {
    const auto pred = predict(c.model, eval.images);
    const Confusion conf = confusion_counts(eval.labels, pred, eval.classes);
    const auto m = static_cast<std::size_t>(c.shard.minority);
    std::size_t total = 0;
    for (std::size_t v : conf.at(m)) total += v;
    if (total == 0)
      throw std::invalid_argument("evaluate_run: eval set has no images of client " + std::to_string(c.id) +
                                  "'s minority class " + std::to_string(m));
    report.accuracies.push_back(static_cast<double>(conf[m][m]) / static_cast<double>(total));
    report.minority_classes.push_back(c.shard.minority);
    report.confusion.push_back(conf);
  }
  report.mean = mean(report.accuracies);
  return report;
}

double mean(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean: no values");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double std_across_skews(std::span<const double> accuracies) {
  if (accuracies.size() < 2) throw std::invalid_argument("std_across_skews: need at least 2 values");
  // Deviations are taken relative to the first value so a constant list gives exactly 0.
  const double n = static_cast<double>(accuracies.size());
  double shift = 0.0;
  for (double v : accuracies) shift += v - accuracies[0];
  shift /= n;
  double ss = 0.0;
  for (double v : accuracies) {
    const double d = (v - accuracies[0]) - shift;
    ss += d * d;
  }
  return std::sqrt(ss / n);
}

}  // namespace codistill::metrics
