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
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "codistill/tensor.hpp"

namespace codistill::data {

/// Labelled grayscale images: `images` is [n, 1, side, side] in [0,1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t side() const { return images.dim(2); }
  std::vector<std::size_t> class_counts() const;
  std::vector<std::size_t> indices_of(int label) const;
  Dataset subset(std::span<const std::size_t> indices) const;

  void validate() const;
};

struct SyntheticSpec {
  int classes = 2;
  std::size_t per_class = 200;
  std::size_t side = 32;
  double separation = 0.5;
  double noise = 0.3;
  std::uint64_t seed = 0;
};

/// Each class is a bright square patch (side/4 wide) on a flat background
/// at a class-specific grid cell, plus seeded Gaussian noise, clamped to
/// [0,1]. Images are ordered class-major.
Dataset gen_synthetic(const SyntheticSpec& spec);

/// Reads `root/<label>/*.pgm` for labels 0..classes-1 in lexicographic
/// path order, resizing each to side x side.
Dataset load_image_dir(const std::filesystem::path& root, std::size_t side, int classes);

struct HoldoutSplit {
  Dataset train;
  Dataset holdout;
};

/// Reserves floor(fraction * n_c) images of every class c for evaluation.
/// Both halves keep source order.
HoldoutSplit stratified_holdout(const Dataset& dataset, double fraction, std::uint64_t seed);

enum class ClassSide { kA, kB };

/// Minority side becomes floor((100 - s) * n / 100); majority unchanged.
std::pair<std::size_t, std::size_t> skewed_counts(std::pair<std::size_t, std::size_t> zero_skew, int skew_percent,
                                                  ClassSide minority);

struct SkewSpec {
  int skew_percent = 0;
  std::size_t per_class = 0;
  int clients = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ClientShard {
  int client_id = 0;
  Dataset data;
  std::vector<std::size_t> source_indices;  // into the partitioned dataset
  std::vector<std::size_t> class_counts;
  int expertise = 0;
  int minority = 1;
};

/// Ties go to the lowest class index.
int expertise_class(std::span<const std::size_t> class_counts);
int expertise_class(const ClientShard& shard);

/// Equal disjoint split followed by nested minority elimination. Clients
/// [0, N/2) are class-0 majority, the rest class-1 majority. Classes
/// above 1 are split evenly and never skewed.
std::vector<ClientShard> partition(const Dataset& dataset, const SkewSpec& spec);

/// Writes `client_id,class,source_index` lines under a header row.
void write_manifest(std::span<const ClientShard> shards, std::ostream& out);

}  // namespace codistill::data
