// SPDX-License-Identifier: Apache-2.0

#include "m3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace m3d {

double mse(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("mse: inputs differ in size or are empty");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double psnr(double m) {
  if (m < 0 || !std::isfinite(m)) throw std::invalid_argument("psnr: mse must be finite and non-negative");
  if (m == 0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(m);
}

double ssim_plane(std::span<const float> a, std::span<const float> b, std::size_t height, std::size_t width) {
  if (a.size() != height * width || b.size() != a.size() || a.empty()) {
    throw std::invalid_argument("ssim: planes do not match " + std::to_string(height) + "x" + std::to_string(width));
  }
  const auto win = std::min({kSsimWindow, height, width});
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  const double n = static_cast<double>(win * win);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + win <= height; ++y0)
    for (std::size_t x0 = 0; x0 + win <= width; ++x0) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t y = y0; y < y0 + win; ++y)
        for (std::size_t x = x0; x < x0 + win; ++x) {
          const double va = a[y * width + x], vb = b[y * width + x];
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      const double ma = sa / n, mb = sb / n;
      const double var_a = std::max(0.0, saa / n - ma * ma), var_b = std::max(0.0, sbb / n - mb * mb);
      const double cov = sab / n - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

double ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 4) {
    throw std::invalid_argument("ssim: expected matching (T, C, H, W) stacks, got " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  const auto planes = a.dim(0) * a.dim(1), h = a.dim(2), w = a.dim(3);
  double total = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    total += ssim_plane(a.data().subspan(p * h * w, h * w), b.data().subspan(p * h * w, h * w), h, w);
  }
  return total / static_cast<double>(planes);
}

namespace {

void check_stack(const char* op, const Tensor& t, const MaskSpec& mask) {
  if (t.rank() != 4 || t.dim(2) != mask.height() || t.dim(3) != mask.width()) {
    throw std::invalid_argument(std::string(op) + ": frames " + shape_str(t.shape()) + " do not match the mask");
  }
}

// Hidden-pixel MSE between two (C, H, W) frames.
double hidden_frame_mse(const float* a, const float* b, std::size_t c, const MaskSpec& mask) {
  const auto h = mask.height(), w = mask.width();
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (mask.visible(y, x)) continue;
        const auto i = (ch * h + y) * w + x;
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
        ++n;
      }
  return acc / static_cast<double>(n);
}

}  // namespace

std::optional<double> hidden_temporal_mse(const Tensor& frames, const MaskSpec& mask) {
  check_stack("hidden_temporal_mse", frames, mask);
  if (mask.hidden_count() == 0 || frames.dim(0) < 2) return std::nullopt;
  const auto plane = frames.dim(1) * frames.dim(2) * frames.dim(3);
  const float* d = frames.data().data();
  double total = 0;
  for (std::size_t t = 0; t + 1 < frames.dim(0); ++t) {
    total += hidden_frame_mse(d + t * plane, d + (t + 1) * plane, frames.dim(1), mask);
  }
  return total / static_cast<double>(frames.dim(0) - 1);
}

std::optional<double> jitter_ratio(const Tensor& output, const Tensor& truth, const MaskSpec& mask) {
  if (output.shape() != truth.shape()) throw std::invalid_argument("jitter_ratio: shapes differ");
  const auto num = hidden_temporal_mse(output, mask), den = hidden_temporal_mse(truth, mask);
  if (!num || !den) return std::nullopt;
  if (*den == 0) return *num == 0 ? std::optional<double>(1.0) : std::nullopt;
  return *num / *den;
}

std::string to_string(Region r) { return r == Region::HiddenOnly ? "hidden" : "full"; }

MetricsRecord evaluate(const Tensor& output, const Tensor& truth, const MaskSpec& mask, Region region,
                       std::string name) {
  if (output.shape() != truth.shape()) {
    throw std::invalid_argument("evaluate: prediction " + shape_str(output.shape()) + " and truth " +
                                shape_str(truth.shape()) + " differ");
  }
  check_stack("evaluate", output, mask);
  MetricsRecord r;
  r.name = std::move(name);
  r.region = region;
  r.ssim = ssim(output, truth);
  if (region == Region::FullFrame) {
    r.mse = mse(output.data(), truth.data());
    const auto all = MaskSpec::all_hidden(mask.height(), mask.width());
    r.jitter_ratio = jitter_ratio(output, truth, all);
  } else if (mask.hidden_count() > 0) {
    const auto plane = output.dim(1) * output.dim(2) * output.dim(3);
    double total = 0;
    for (std::size_t t = 0; t < output.dim(0); ++t) {
      total += hidden_frame_mse(output.data().data() + t * plane, truth.data().data() + t * plane, output.dim(1), mask);
    }
    r.mse = total / static_cast<double>(output.dim(0));
    r.jitter_ratio = jitter_ratio(output, truth, mask);
  }
  if (r.mse) r.psnr = psnr(*r.mse);
  return r;
}

std::string metrics_csv_header() { return "name,region,mse,psnr,ssim,jitter_ratio\n"; }

std::string metrics_csv_row(const MetricsRecord& r) {
  std::ostringstream os;
  os << std::setprecision(9);
  auto opt = [&](const std::optional<double>& v) {
    if (v) os << *v;
  };
  os << r.name << ',' << to_string(r.region) << ',';
  opt(r.mse);
  os << ',';
  opt(r.psnr);
  os << ',' << r.ssim << ',';
  opt(r.jitter_ratio);
  os << '\n';
  return os.str();
}

}  // namespace m3d
