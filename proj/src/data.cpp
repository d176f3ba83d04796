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

#include "codistill/data.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

#include "codistill/pgm.hpp"
#include "codistill/rng.hpp"

namespace codistill::data {

namespace fs = std::filesystem;

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
  for (int y : labels) ++counts.at(static_cast<std::size_t>(y));
  return counts;
}

std::vector<std::size_t> Dataset::indices_of(int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) out.push_back(i);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.classes = classes;
  out.images = gather_rows(images, indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  return out;
}

void Dataset::validate() const {
  if (classes < 2) throw std::invalid_argument("dataset: classes must be >= 2");
  if (labels.empty()) throw std::invalid_argument("dataset: no images");
  if (images.rank() != 4 || images.dim(0) != labels.size() || images.dim(1) != 1 || images.dim(2) != images.dim(3))
    throw std::invalid_argument("dataset: images must be [n,1,side,side] with n = label count, got " +
                                shape_string(images.shape()));
  for (int y : labels)
    if (y < 0 || y >= classes) throw std::invalid_argument("dataset: label " + std::to_string(y) + " out of range");
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw std::invalid_argument("gen_synthetic: classes must be >= 2");
  if (spec.per_class < 1) throw std::invalid_argument("gen_synthetic: per_class must be >= 1");
  if (!(spec.separation > 0.0)) throw std::invalid_argument("gen_synthetic: separation must be positive");
  if (!(spec.noise >= 0.0)) throw std::invalid_argument("gen_synthetic: noise must be non-negative");
  const std::size_t patch = spec.side / 4;
  if (patch < 2)
    throw std::invalid_argument("gen_synthetic: side " + std::to_string(spec.side) + " is below the 8-pixel template support");
  const std::size_t grid = spec.side / patch;
  const auto classes = static_cast<std::size_t>(spec.classes);
  if (classes > grid * grid)
    throw std::invalid_argument("gen_synthetic: side " + std::to_string(spec.side) + " fits only " +
                                std::to_string(grid * grid) + " class templates");

  constexpr double kBackground = 0.25;
  const std::size_t stride = (grid * grid) / classes;
  const std::size_t pixels = spec.side * spec.side;
  std::vector<std::vector<double>> templates(classes, std::vector<double>(pixels, kBackground));
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t cell = c * stride;
    const std::size_t y0 = (cell / grid) * patch, x0 = (cell % grid) * patch;
    for (std::size_t y = y0; y < y0 + patch; ++y)
      for (std::size_t x = x0; x < x0 + patch; ++x) templates[c][y * spec.side + x] = kBackground + spec.separation;
  }

  Dataset out;
  out.classes = spec.classes;
  out.images = Tensor({classes * spec.per_class, 1, spec.side, spec.side});
  out.labels.reserve(classes * spec.per_class);
  Rng rng = make_rng(spec.seed, {stream::kSynthetic});
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::size_t n = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < spec.per_class; ++i, ++n) {
      auto img = out.images.row(n);
      for (std::size_t p = 0; p < pixels; ++p) {
        const double v = templates[c][p] + (spec.noise > 0.0 ? spec.noise * gauss(rng) : 0.0);
        img[p] = std::clamp(v, 0.0, 1.0);
      }
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

Dataset load_image_dir(const fs::path& root, std::size_t side, int classes) {
  if (classes < 2) throw std::invalid_argument("load_image_dir: classes must be >= 2");
  if (side == 0) throw std::invalid_argument("load_image_dir: side must be positive");
  std::vector<std::vector<double>> pixels;
  std::vector<int> labels;
  for (int c = 0; c < classes; ++c) {
    const fs::path dir = root / std::to_string(c);
    if (!fs::is_directory(dir)) throw std::runtime_error("load_image_dir: missing class directory \"" + std::to_string(c) + "\" (" + dir.string() + ")");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
    if (files.empty()) throw std::runtime_error("load_image_dir: class directory has no .pgm files: " + dir.string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      pixels.push_back(resize_bilinear(read_pgm(f), side));
      labels.push_back(c);
    }
  }
  Dataset out;
  out.classes = classes;
  out.images = Tensor({labels.size(), 1, side, side});
  for (std::size_t i = 0; i < pixels.size(); ++i) std::copy(pixels[i].begin(), pixels[i].end(), out.images.row(i).begin());
  out.labels = std::move(labels);
  return out;
}

HoldoutSplit stratified_holdout(const Dataset& dataset, double fraction, std::uint64_t seed) {
  dataset.validate();
  if (!(fraction >= 0.0 && fraction < 1.0)) throw std::invalid_argument("stratified_holdout: fraction must be in [0,1)");
  std::vector<bool> held(dataset.size(), false);
  for (int c = 0; c < dataset.classes; ++c) {
    auto idx = dataset.indices_of(c);
    Rng rng = make_rng(seed, {stream::kHoldout, static_cast<std::uint64_t>(c)});
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto take = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < take; ++i) held[idx[i]] = true;
  }
  std::vector<std::size_t> train, holdout;
  for (std::size_t i = 0; i < dataset.size(); ++i) (held[i] ? holdout : train).push_back(i);
  if (train.empty()) throw std::invalid_argument("stratified_holdout: nothing left for training");
  HoldoutSplit split;
  split.train = dataset.subset(train);
  if (!holdout.empty()) split.holdout = dataset.subset(holdout);
  else split.holdout.classes = dataset.classes;
  return split;
}

std::pair<std::size_t, std::size_t> skewed_counts(std::pair<std::size_t, std::size_t> zero_skew, int skew_percent,
                                                  ClassSide minority) {
  if (skew_percent < 0 || skew_percent >= 100)
    throw std::invalid_argument("skewed_counts: skew must be in [0,100), got " + std::to_string(skew_percent));
  auto out = zero_skew;
  std::size_t& n = minority == ClassSide::kA ? out.first : out.second;
  n = n * static_cast<std::size_t>(100 - skew_percent) / 100;
  if (n == 0)
    throw std::invalid_argument("skewed_counts: skew " + std::to_string(skew_percent) +
                                "% leaves no minority images (degenerate client)");
  return out;
}

void SkewSpec::validate() const {
  if (skew_percent < 0 || skew_percent >= 100)
    throw std::invalid_argument("skew spec: skew must be in [0,100), got " + std::to_string(skew_percent));
  if (clients < 2 || clients % 2 != 0)
    throw std::invalid_argument("skew spec: client count must be even and >= 2, got " + std::to_string(clients));
  if (per_class < 1) throw std::invalid_argument("skew spec: per_class must be >= 1");
}

int expertise_class(std::span<const std::size_t> class_counts) {
  if (class_counts.empty()) throw std::invalid_argument("expertise_class: no classes");
  // max_element returns the first maximum.
  return static_cast<int>(std::max_element(class_counts.begin(), class_counts.end()) - class_counts.begin());
}

int expertise_class(const ClientShard& shard) { return expertise_class(shard.class_counts); }

std::vector<ClientShard> partition(const Dataset& dataset, const SkewSpec& spec) {
  dataset.validate();
  spec.validate();
  const auto n_clients = static_cast<std::size_t>(spec.clients);
  const std::size_t n = spec.per_class;

  // slices[client][class] = source indices before elimination.
  std::vector<std::vector<std::vector<std::size_t>>> slices(
      n_clients, std::vector<std::vector<std::size_t>>(static_cast<std::size_t>(dataset.classes)));
  for (int c = 0; c < dataset.classes; ++c) {
    auto idx = dataset.indices_of(c);
    if (idx.size() < n_clients * n)
      throw std::invalid_argument("partition: class " + std::to_string(c) + " needs " + std::to_string(n_clients * n) +
                                  " images, only " + std::to_string(idx.size()) + " available");
    Rng rng = make_rng(spec.seed, {stream::kPartition, static_cast<std::uint64_t>(c)});
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < n_clients; ++k)
      slices[k][static_cast<std::size_t>(c)].assign(idx.begin() + static_cast<std::ptrdiff_t>(k * n),
                                                    idx.begin() + static_cast<std::ptrdiff_t>((k + 1) * n));
  }

  std::vector<ClientShard> shards;
  shards.reserve(n_clients);
  for (std::size_t k = 0; k < n_clients; ++k) {
    const bool a_majority = k < n_clients / 2;
    const int minority = a_majority ? 1 : 0;
    auto& minority_slice = slices[k][static_cast<std::size_t>(minority)];
    // The elimination order depends only on (seed, client), so a larger
    // skew always removes a superset of what a smaller one removed.
    Rng rng = make_rng(spec.seed, {stream::kElimination, k});
    std::shuffle(minority_slice.begin(), minority_slice.end(), rng);
    const auto kept = skewed_counts({n, n}, spec.skew_percent, a_majority ? ClassSide::kB : ClassSide::kA);
    minority_slice.resize(a_majority ? kept.second : kept.first);

    ClientShard shard;
    shard.client_id = static_cast<int>(k);
    for (const auto& s : slices[k]) shard.source_indices.insert(shard.source_indices.end(), s.begin(), s.end());
    std::sort(shard.source_indices.begin(), shard.source_indices.end());
    shard.data = dataset.subset(shard.source_indices);
    shard.class_counts = shard.data.class_counts();
    shard.expertise = expertise_class(shard.class_counts);
    shard.minority = minority;
    shards.push_back(std::move(shard));
  }
  return shards;
}

void write_manifest(std::span<const ClientShard> shards, std::ostream& out) {
  out << "client_id,class,source_index\n";
  for (const auto& s : shards)
    for (std::size_t i = 0; i < s.source_indices.size(); ++i)
      out << s.client_id << ',' << s.data.labels[i] << ',' << s.source_indices[i] << '\n';
}

}  // namespace codistill::data
