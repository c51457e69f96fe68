// SPDX-License-Identifier: Apache-2.0
//
// Videos, synthetic motifs and the corpus file.
//
// Corpus layout (little-endian): "M3DV", u32 version, u32 count, then per
// video u32 T, H, W, C, fps followed by T*H*W*C f32 pixels in frame-major,
// row-major, channel-last order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "m3d/tensor.hpp"

namespace m3d {

inline constexpr std::uint32_t kCorpusVersion = 1;

struct Video {
  std::size_t frames = 0, height = 0, width = 0, channels = 0;
  std::uint32_t fps = 30;
  std::vector<float> pixels;  // (T, H, W, C)

  void validate() const;
  // (T, C, H, W)
  Tensor to_tensor() const;
  static Video from_tensor(const Tensor& frames, std::uint32_t fps);
  bool operator==(const Video&) const = default;
};

enum class Motif { MovingSquare, MovingGradient, PanningTexture };
std::string to_string(Motif m);
Motif parse_motif(const std::string& name);

struct SyntheticSpec {
  Motif motif = Motif::MovingSquare;
  std::size_t frames = 32, height = 16, width = 16, channels = 1;
  int max_velocity = 1;    // pixels per frame, per axis
  double amplitude = 0.3;  // gradient / texture contrast
  std::uint32_t fps = 30;
  std::uint64_t seed = 0;

  void validate() const;
};

// Integer square trajectory that bounces off the frame edges.
struct SquareTrack {
  std::size_t size = 0;
  long x0 = 0, y0 = 0, vx = 0, vy = 0;
  float intensity = 1.0f;
  float base = 0, grad_x = 0, grad_y = 0;  // background ramp

  // Top-left corner at frame t.
  std::pair<long, long> position(std::size_t t, std::size_t height, std::size_t width) const;
};
SquareTrack square_track(const SyntheticSpec& spec, std::size_t index);

Video generate_video(const SyntheticSpec& spec, std::size_t index);
std::vector<Video> generate_corpus(const SyntheticSpec& spec, std::size_t count);

std::string encode_corpus(const std::vector<Video>& videos);
std::vector<Video> decode_corpus(std::string_view bytes, const std::string& context = "corpus");
void write_corpus(const std::filesystem::path& path, const std::vector<Video>& videos);
std::vector<Video> read_corpus(const std::filesystem::path& path);

// 12 + sum(20 + 4 T H W C)
std::size_t corpus_file_size(const std::vector<Video>& videos);

}  // namespace m3d
