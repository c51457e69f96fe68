// SPDX-License-Identifier: Apache-2.0

#include "m3d/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "m3d/binary_io.hpp"

namespace m3d {

std::string encode_pnm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw std::invalid_argument("pnm: only 1 or 3 channels supported, got " + std::to_string(image.channels));
  }
  if (image.pixels.size() != image.height * image.width * image.channels) {
    throw std::invalid_argument("pnm: pixel buffer does not match dimensions");
  }
  std::ostringstream os;
  os << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  std::string out = os.str();
  out.reserve(out.size() + image.pixels.size());
  for (float v : image.pixels) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
  }
  return out;
}

Image decode_pnm(std::string_view bytes, const std::string& context) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const auto start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw std::runtime_error(context + ": truncated header");
    return std::string(bytes.substr(start, pos - start));
  };
  const auto magic = token();
  Image img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw std::runtime_error(context + ": not a binary PGM/PPM file");
  }
  img.width = std::stoul(token());
  img.height = std::stoul(token());
  const auto maxval = std::stoul(token());
  if (maxval != 255) throw std::runtime_error(context + ": only maxval 255 is supported");
  ++pos;  // single whitespace after maxval
  const auto n = img.width * img.height * img.channels;
  if (bytes.size() < pos + n) throw std::runtime_error(context + ": truncated pixel data");
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0f;
  return img;
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  write_file_atomic(path, encode_pnm(image));
}

Image read_pnm(const std::filesystem::path& path) {
  return decode_pnm(read_file(path), path.string());
}

}  // namespace m3d
