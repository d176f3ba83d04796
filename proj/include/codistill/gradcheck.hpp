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
#include <vector>

#include "codistill/nn.hpp"
#include "codistill/rng.hpp"

namespace codistill::nn {

/// Random small architecture on 8x8 inputs (reduced widths and kernels),
/// cheap enough for per-parameter central differences.
Architecture random_tiny_architecture(Rng& rng);

struct GradCheckResult {
  Architecture arch;
  std::size_t parameters = 0;
  double max_relative_error = 0.0;
};

/// Compares `backward` against `finite_diff_gradients` for cross-entropy on
/// a random batch, with random non-zero biases.
GradCheckResult gradient_check(const Architecture& arch, std::uint64_t seed, std::size_t batch = 3,
                               double eps = 1e-6);

/// `count` random tiny configurations derived from `seed`.
std::vector<GradCheckResult> gradient_check_suite(int count, std::uint64_t seed);

}  // namespace codistill::nn
