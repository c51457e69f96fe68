// SPDX-License-Identifier: Apache-2.0
//
// Binary PGM (one channel) and PPM (three channels) frames. Pixel values are
// in [0, 1], interleaved H x W x C, quantized to 8 bits on write.

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace m3d {

struct Image {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<float> pixels;  // H x W x C
};

std::string encode_pnm(const Image& image);
Image decode_pnm(std::string_view bytes, const std::string& context = "image");

void write_pnm(const std::filesystem::path& path, const Image& image);
Image read_pnm(const std::filesystem::path& path);

}  // namespace m3d
