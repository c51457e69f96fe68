// SPDX-License-Identifier: Apache-2.0

#include "m3d/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "m3d/binary_io.hpp"
#include "m3d/random.hpp"

namespace m3d {

void Video::validate() const {
  if (frames == 0 || height == 0 || width == 0 || channels == 0) throw std::invalid_argument("video: empty dimension");
  if (pixels.size() != frames * height * width * channels) {
    throw std::invalid_argument("video: pixel count does not match dimensions");
  }
}

Tensor Video::to_tensor() const {
  validate();
  const auto plane = height * width;
  std::vector<float> out(pixels.size());
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < channels; ++c)
        out[(t * channels + c) * plane + p] = pixels[(t * plane + p) * channels + c];
  return Tensor(Shape{frames, channels, height, width}, std::move(out));
}

Video Video::from_tensor(const Tensor& frames, std::uint32_t fps) {
  if (frames.rank() != 4) throw std::invalid_argument("video: expected a (T, C, H, W) tensor");
  Video v;
  v.frames = frames.dim(0);
  v.channels = frames.dim(1);
  v.height = frames.dim(2);
  v.width = frames.dim(3);
  v.fps = fps;
  const auto plane = v.height * v.width;
  v.pixels.resize(frames.numel());
  for (std::size_t t = 0; t < v.frames; ++t)
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < v.channels; ++c)
        v.pixels[(t * plane + p) * v.channels + c] = frames.data()[(t * v.channels + c) * plane + p];
  return v;
}

std::string to_string(Motif m) {
  switch (m) {
    case Motif::MovingSquare: return "moving-square";
    case Motif::MovingGradient: return "moving-gradient";
    case Motif::PanningTexture: return "panning-texture";
  }
  return "?";
}

Motif parse_motif(const std::string& name) {
  for (auto m : {Motif::MovingSquare, Motif::MovingGradient, Motif::PanningTexture})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown motif '" + name + "' (expected moving-square|moving-gradient|panning-texture)");
}

void SyntheticSpec::validate() const {
  if (frames == 0 || height < 4 || width < 4 || channels == 0) {
    throw std::invalid_argument("synthetic spec: need frames >= 1 and frames at least 4x4");
  }
  if (max_velocity < 0) throw std::invalid_argument("synthetic spec: max_velocity must be non-negative");
  if (!(amplitude >= 0.0 && amplitude <= 0.5)) throw std::invalid_argument("synthetic spec: amplitude must lie in [0, 0.5]");
  if (fps == 0) throw std::invalid_argument("synthetic spec: fps must be positive");
}

namespace {

// Reflects p into [0, span] (triangle wave).
long bounce(long p, long span) {
  if (span == 0) return 0;
  const long period = 2 * span;
  long m = p % period;
  if (m < 0) m += period;
  return m <= span ? m : period - m;
}

}  // namespace

std::pair<long, long> SquareTrack::position(std::size_t t, std::size_t height, std::size_t width) const {
  const auto span_x = static_cast<long>(width - size), span_y = static_cast<long>(height - size);
  const auto tt = static_cast<long>(t);
  return {bounce(x0 + vx * tt, span_x), bounce(y0 + vy * tt, span_y)};
}

SquareTrack square_track(const SyntheticSpec& spec, std::size_t index) {
  spec.validate();
  Rng rng = make_rng(spec.seed, index);
  SquareTrack s;
  const auto max_size = std::max<std::size_t>(2, std::min(spec.height, spec.width) / 3);
  s.size = 2 + uniform_index(rng, max_size - 1);
  s.x0 = static_cast<long>(uniform_index(rng, spec.width - s.size + 1));
  s.y0 = static_cast<long>(uniform_index(rng, spec.height - s.size + 1));
  const auto v = static_cast<std::size_t>(spec.max_velocity);
  do {
    s.vx = static_cast<long>(uniform_index(rng, 2 * v + 1)) - spec.max_velocity;
    s.vy = static_cast<long>(uniform_index(rng, 2 * v + 1)) - spec.max_velocity;
  } while (v > 0 && s.vx == 0 && s.vy == 0);
  s.intensity = static_cast<float>(0.8 + 0.2 * uniform01(rng));
  s.base = static_cast<float>(0.15 + 0.2 * uniform01(rng));
  s.grad_x = static_cast<float>(spec.amplitude * (2.0 * uniform01(rng) - 1.0));
  s.grad_y = static_cast<float>(spec.amplitude * (2.0 * uniform01(rng) - 1.0));
  return s;
}

Video generate_video(const SyntheticSpec& spec, std::size_t index) {
  spec.validate();
  Video v;
  v.frames = spec.frames;
  v.height = spec.height;
  v.width = spec.width;
  v.channels = spec.channels;
  v.fps = spec.fps;
  v.pixels.resize(v.frames * v.height * v.width * v.channels);
  const double h1 = static_cast<double>(spec.height - 1), w1 = static_cast<double>(spec.width - 1);
  auto put = [&](std::size_t t, std::size_t y, std::size_t x, std::size_t c, double value) {
    v.pixels[((t * v.height + y) * v.width + x) * v.channels + c] = static_cast<float>(std::clamp(value, 0.0, 1.0));
  };
  constexpr double two_pi = 2.0 * std::numbers::pi;

  switch (spec.motif) {
    case Motif::MovingSquare: {
      const auto s = square_track(spec, index);
      for (std::size_t t = 0; t < v.frames; ++t) {
        const auto [px, py] = s.position(t, v.height, v.width);
        for (std::size_t y = 0; y < v.height; ++y)
          for (std::size_t x = 0; x < v.width; ++x) {
            const bool inside = static_cast<long>(x) >= px && static_cast<long>(x) < px + static_cast<long>(s.size) &&
                                static_cast<long>(y) >= py && static_cast<long>(y) < py + static_cast<long>(s.size);
            for (std::size_t c = 0; c < v.channels; ++c) {
              const double tint = 1.0 - 0.15 * static_cast<double>(c);
              const double bg = s.base + s.grad_x * (x / w1 - 0.5) + s.grad_y * (y / h1 - 0.5) + 0.3;
              put(t, y, x, c, inside ? s.intensity * tint : bg * tint);
            }
          }
      }
      break;
    }
    case Motif::MovingGradient: {
      Rng rng = make_rng(spec.seed, index);
      const double angle = two_pi * uniform01(rng), phase = two_pi * uniform01(rng);
      const double cycles = 0.5 + uniform01(rng), speed = 0.05 + 0.1 * uniform01(rng) * std::max(1, spec.max_velocity);
      for (std::size_t t = 0; t < v.frames; ++t)
        for (std::size_t y = 0; y < v.height; ++y)
          for (std::size_t x = 0; x < v.width; ++x) {
            const double u = std::cos(angle) * x / w1 + std::sin(angle) * y / h1;
            for (std::size_t c = 0; c < v.channels; ++c) {
              put(t, y, x, c, 0.5 + spec.amplitude * std::sin(two_pi * cycles * u + phase + speed * t + 0.7 * c));
            }
          }
      break;
    }
    case Motif::PanningTexture: {
      Rng rng = make_rng(spec.seed, index);
      constexpr int kWaves = 4;
      double fx[kWaves], fy[kWaves], ph[kWaves];
      for (int k = 0; k < kWaves; ++k) {
        fx[k] = 1.0 + 3.0 * uniform01(rng);
        fy[k] = 1.0 + 3.0 * uniform01(rng);
        ph[k] = two_pi * uniform01(rng);
      }
      const auto vel = static_cast<long>(uniform_index(rng, 2 * static_cast<std::size_t>(spec.max_velocity) + 1)) -
                       spec.max_velocity;
      for (std::size_t t = 0; t < v.frames; ++t)
        for (std::size_t y = 0; y < v.height; ++y)
          for (std::size_t x = 0; x < v.width; ++x) {
            const double sx = static_cast<double>(static_cast<long>(x) + vel * static_cast<long>(t));
            double acc = 0;
            for (int k = 0; k < kWaves; ++k)
              acc += std::sin(two_pi * (fx[k] * sx / spec.width + fy[k] * y / static_cast<double>(spec.height)) + ph[k]);
            for (std::size_t c = 0; c < v.channels; ++c) {
              put(t, y, x, c, 0.5 + spec.amplitude * acc / kWaves * (1.0 - 0.1 * c));
            }
          }
      break;
    }
  }
  return v;
}

std::vector<Video> generate_corpus(const SyntheticSpec& spec, std::size_t count) {
  std::vector<Video> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_video(spec, i));
  return out;
}

std::string encode_corpus(const std::vector<Video>& videos) {
  ByteWriter w;
  w.bytes("M3DV");
  w.u32(kCorpusVersion);
  w.u32(static_cast<std::uint32_t>(videos.size()));
  for (const auto& v : videos) {
    v.validate();
    for (auto d : {v.frames, v.height, v.width, v.channels}) w.u32(static_cast<std::uint32_t>(d));
    w.u32(v.fps);
    for (float p : v.pixels) w.f32(p);
  }
  return w.take();
}

std::vector<Video> decode_corpus(std::string_view bytes, const std::string& context) {
  ByteReader r(bytes, context);
  if (r.bytes(4) != "M3DV") r.fail("not a corpus file (bad magic)");
  if (const auto version = r.u32(); version != kCorpusVersion) r.fail("unsupported corpus version " + std::to_string(version));
  const auto count = r.u32();
  std::vector<Video> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    Video v;
    v.frames = r.u32();
    v.height = r.u32();
    v.width = r.u32();
    v.channels = r.u32();
    v.fps = r.u32();
    if (v.frames == 0 || v.height == 0 || v.width == 0 || v.channels == 0) {
      r.fail("video " + std::to_string(i) + " has an empty dimension");
    }
    const auto n = v.frames * v.height * v.width * v.channels;
    if (n > r.remaining() / 4) r.fail("video " + std::to_string(i) + " is truncated");
    v.pixels.resize(n);
    for (auto& p : v.pixels) p = r.f32();
    out.push_back(std::move(v));
  }
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Video>& videos) {
  write_file_atomic(path, encode_corpus(videos));
}

std::vector<Video> read_corpus(const std::filesystem::path& path) {
  return decode_corpus(read_file(path), path.string());
}

std::size_t corpus_file_size(const std::vector<Video>& videos) {
  std::size_t n = 12;
  for (const auto& v : videos) n += 20 + 4 * v.frames * v.height * v.width * v.channels;
  return n;
}

}  // namespace m3d
