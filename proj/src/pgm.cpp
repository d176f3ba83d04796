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

#include "codistill/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace codistill::data {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string token;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      if (!token.empty()) break;
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  return token;
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path, const char* what) {
  const std::string tok = header_token(in);
  try {
    std::size_t used = 0;
    const unsigned long v = std::stoul(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("pgm: bad " + std::string(what) + " '" + tok + "' in " + path.string());
  }
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pgm: cannot open " + path.string());
  if (header_token(in) != "P5") throw std::runtime_error("pgm: not a binary P5 file: " + path.string());
  GrayImage img;
  img.width = header_number(in, path, "width");
  img.height = header_number(in, path, "height");
  const std::size_t maxval = header_number(in, path, "maxval");
  if (img.width == 0 || img.height == 0) throw std::runtime_error("pgm: empty image " + path.string());
  if (maxval == 0 || maxval > 255) throw std::runtime_error("pgm: only 8-bit maxval supported: " + path.string());
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw std::runtime_error("pgm: truncated pixel data in " + path.string());
  if (maxval != 255)
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::lround(p * 255.0 / static_cast<double>(maxval)));
  return img;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  if (image.pixels.size() != image.width * image.height) throw std::invalid_argument("pgm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pgm: cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

std::vector<double> resize_bilinear(const GrayImage& image, std::size_t side) {
  if (side == 0) throw std::invalid_argument("resize_bilinear: side must be positive");
  std::vector<double> out(side * side);
  const double sx = static_cast<double>(image.width) / static_cast<double>(side);
  const double sy = static_cast<double>(image.height) / static_cast<double>(side);
  const auto px = [&](std::size_t x, std::size_t y) { return static_cast<double>(image.pixels[y * image.width + x]); };
  for (std::size_t oy = 0; oy < side; ++oy) {
    const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < side; ++ox) {
      const double fx = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = px(x0, y0) + wx * (px(x1, y0) - px(x0, y0));
      const double bottom = px(x0, y1) + wx * (px(x1, y1) - px(x0, y1));
      out[oy * side + ox] = (top + wy * (bottom - top)) / 255.0;
    }
  }
  return out;
}

}  // namespace codistill::data
