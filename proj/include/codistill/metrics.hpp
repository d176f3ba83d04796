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

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "codistill/data.hpp"
#include "codistill/federation.hpp"
#include "codistill/nn.hpp"

namespace codistill::metrics {

/// Argmax per row; ties resolve to the lowest class index.
std::vector<int> predict(const nn::ModelState& model, const Tensor& images);

/// confusion[true][predicted] counts.
using Confusion = std::vector<std::vector<std::size_t>>;
Confusion confusion_counts(std::span<const int> truth, std::span<const int> predicted, int classes);

/// Fraction of `minority` images in `eval` whose prediction is `minority`.
double minority_accuracy(const nn::ModelState& model, const data::Dataset& eval, int minority);

struct EvalReport {
  std::vector<double> accuracies;  // per client
  std::vector<int> minority_classes;
  std::vector<Confusion> confusion;  // per client, over the whole eval set
  double mean = 0.0;
};

/// Each client's model scored on the eval images of that client's own
/// minority class.
EvalReport evaluate_run(std::span<const fed::ClientState> clients, const data::Dataset& eval);

double mean(std::span<const double> values);

/// Population standard deviation (divide by n) of accuracies on the 0-1
/// scale. Needs at least two values.
double std_across_skews(std::span<const double> accuracies);

inline constexpr const char* kSdConvention = "population";

}  // namespace codistill::metrics
