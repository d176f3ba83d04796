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

#include "codistill/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace codistill::nn {

namespace {

constexpr char kMagic[4] = {'C', 'D', 'S', 'M'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::span<const std::uint8_t> bytes(std::size_t n) {
    if (n > in_.size() - pos_) throw std::runtime_error("checkpoint: truncated at byte " + std::to_string(pos_));
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  U uint() {
    auto b = bytes(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelState& model) {
  Writer w;
  w.bytes(kMagic, 4);
  w.uint<std::uint32_t>(kCheckpointVersion);
  const Architecture& a = model.arch;
  for (int v : {a.input_side, a.conv1_kernel, a.conv2_kernel, a.conv1_channels, a.conv2_channels, a.conv3_channels,
                a.fc1_width, a.classes})
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(model.params.size()));
  for (const auto& p : model.params) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t e : p.value.shape()) w.uint<std::uint64_t>(e);
    for (double v : p.value.data()) w.f64(v);
  }
  return w.take();
}

ModelState decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic (expected CDSM)");
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));

  ModelState model;
  Architecture& a = model.arch;
  for (int* field : {&a.input_side, &a.conv1_kernel, &a.conv2_kernel, &a.conv1_channels, &a.conv2_channels,
                     &a.conv3_channels, &a.fc1_width, &a.classes})
    *field = static_cast<int>(r.uint<std::uint32_t>());
  const auto layout = parameter_layout(a);

  const auto count = r.uint<std::uint32_t>();
  if (count != layout.size()) throw std::runtime_error("checkpoint: expected " + std::to_string(layout.size()) +
                                                       " tensors, found " + std::to_string(count));
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.uint<std::uint32_t>();
    auto name_bytes = r.bytes(name_len);
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto rank = r.uint<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.uint<std::uint64_t>());
    if (name != layout[t].first || shape != layout[t].second)
      throw std::runtime_error("checkpoint: tensor " + std::to_string(t) + " is " + name + shape_string(shape) +
                               ", expected " + layout[t].first + shape_string(layout[t].second));
    Tensor value(shape);
    for (double& v : value.data()) v = r.f64();
    model.params.push_back({std::move(name), std::move(value)});
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes after last tensor");
  return model;
}

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace codistill::nn
