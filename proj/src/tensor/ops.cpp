// SPDX-License-Identifier: Apache-2.0

#include "m3d/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace m3d {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

template <typename T>
std::string shapes(const BasicTensor<T>& a) {
  return shape_str(a.shape());
}
template <typename T>
std::string shapes(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return shape_str(a.shape()) + " and " + shape_str(b.shape());
}

template <typename T>
BasicTape<T>* tape_for(std::initializer_list<const BasicTensor<T>*> inputs) {
  auto* tape = active_tape<T>();
  if (!tape) return nullptr;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T>
BasicTensor<T> make_output(const char* op, Shape shape, Buffer<T> data, bool tracked) {
  if (!Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(data.data(), data.size()).allFinite()) {
    throw std::domain_error(std::string(op) + ": produced a non-finite value");
  }
  return BasicTensor<T>(std::move(shape), std::move(data), tracked);
}

template <typename T>
std::vector<std::shared_ptr<TensorNode<T>>> nodes(std::initializer_list<const BasicTensor<T>*> inputs) {
  std::vector<std::shared_ptr<TensorNode<T>>> out;
  for (const auto* t : inputs) {
    if (t->defined()) out.push_back(t->node());
  }
  return out;
}

template <typename T>
bool wants_grad(const std::shared_ptr<TensorNode<T>>& n) {
  return n && n->requires_grad;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("add", "shape mismatch " + shapes(a, b));
  Buffer<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  auto* tape = tape_for<T>({&a, &b});
  auto result = make_output("add", a.shape(), std::move(out), tape != nullptr);
  if (tape) {
    auto na = a.node(), nb = b.node(), no = result.node();
    tape->record("add", {na, nb}, no, [na, nb, no] {
      for (auto& n : {na, nb}) {
        if (!wants_grad(n)) continue;
        for (std::size_t i = 0; i < no->grad.size(); ++i) n->grad[i] += no->grad[i];
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("sub", "shape mismatch " + shapes(a, b));
  Buffer<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  auto* tape = tape_for<T>({&a, &b});
  auto result = make_output("sub", a.shape(), std::move(out), tape != nullptr);
  if (tape) {
    auto na = a.node(), nb = b.node(), no = result.node();
    tape->record("sub", {na, nb}, no, [na, nb, no] {
      if (wants_grad(na))
        for (std::size_t i = 0; i < no->grad.size(); ++i) na->grad[i] += no->grad[i];
      if (wants_grad(nb))
        for (std::size_t i = 0; i < no->grad.size(); ++i) nb->grad[i] -= no->grad[i];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("mul", "shape mismatch " + shapes(a, b));
  Buffer<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  auto* tape = tape_for<T>({&a, &b});
  auto result = make_output("mul", a.shape(), std::move(out), tape != nullptr);
  if (tape) {
    auto na = a.node(), nb = b.node(), no = result.node();
    tape->record("mul", {na, nb}, no, [na, nb, no] {
      if (wants_grad(na))
        for (std::size_t i = 0; i < no->grad.size(); ++i) na->grad[i] += no->grad[i] * nb->data[i];
      if (wants_grad(nb))
        for (std::size_t i = 0; i < no->grad.size(); ++i) nb->grad[i] += no->grad[i] * na->data[i];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  Buffer<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  auto* tape = tape_for<T>({&a});
  auto result = make_output("scale", a.shape(), std::move(out), tape != nullptr);
  if (tape) {
    auto na = a.node(), no = result.node();
    tape->record("scale", {na}, no, [na, no, factor] {
      for (std::size_t i = 0; i < no->grad.size(); ++i) na->grad[i] += no->grad[i] * factor;
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& a) {
  Buffer<T> out(a.numel());
  {
    Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> x(a.data().data(), a.numel());
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(out.data(), out.size()) = x / (T(1) + (-x).exp());
  }
  auto* tape = tape_for<T>({&a});
  auto result = make_output("silu", a.shape(), std::move(out), tape != nullptr);
  if (tape) {
    auto na = a.node(), no = result.node();
    tape->record("silu", {na}, no, [na, no] {
      const auto n = no->grad.size();
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> v(na->data.data(), n), dy(no->grad.data(), n);
      const Eigen::Array<T, Eigen::Dynamic, 1> s = T(1) / (T(1) + (-v).exp());
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(na->grad.data(), n) += dy * s * (T(1) + v * (T(1) - s));
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_error("matmul", "cannot multiply " + shapes(a, b));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer<T> out(m * n);
  MatMap<T>(out.data(), m, n).noalias() = ConstMatMap<T>(a.data().data(), m, k) * ConstMatMap<T>(b.data().data(), k, n);
  auto* tape = tape_for<T>({&a, &b});
  auto result = make_output("matmul", Shape{m, n}, std::move(out), tape != nullptr);
  if (tape) {
    auto na = a.node(), nb = b.node(), no = result.node();
    tape->record("matmul", {na, nb}, no, [na, nb, no, m, k, n] {
      ConstMatMap<T> dy(no->grad.data(), m, n);
      if (wants_grad(na))
        MatMap<T>(na->grad.data(), m, k).noalias() += dy * ConstMatMap<T>(nb->data.data(), k, n).transpose();
      if (wants_grad(nb))
        MatMap<T>(nb->grad.data(), k, n).noalias() += ConstMatMap<T>(na->data.data(), m, k).transpose() * dy;
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  if (x.rank() == 0 || bias.numel() != x.shape().back()) {
    shape_error("add_bias", "bias " + shape_str(bias.shape()) + " does not match last axis of " + shapes(x));
  }
  const auto d = bias.numel();
  const auto rows = x.numel() / d;
  Buffer<T> out(x.data().begin(), x.data().end());
  auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] += bv[j];
  auto* tape = tape_for<T>({&x, &bias});
  auto result = make_output("add_bias", x.shape(), std::move(out), tape != nullptr);
  if (tape) {
    auto nx = x.node(), nb = bias.node(), no = result.node();
    tape->record("add_bias", {nx, nb}, no, [nx, nb, no, rows, d] {
      if (wants_grad(nx))
        for (std::size_t i = 0; i < no->grad.size(); ++i) nx->grad[i] += no->grad[i];
      if (wants_grad(nb)) {
        for (std::size_t j = 0; j < d; ++j) {
          double acc = 0;
          for (std::size_t r = 0; r < rows; ++r) acc += no->grad[r * d + j];
          nb->grad[j] += static_cast<T>(acc);
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> add_channel(const BasicTensor<T>& x, const BasicTensor<T>& v) {
  if (x.rank() < 2 || v.numel() != x.dim(1)) {
    shape_error("add_channel", "vector " + shape_str(v.shape()) + " does not match channels of " + shapes(x));
  }
  const auto n = x.dim(0), c = x.dim(1);
  const auto inner = x.numel() / (n * c);
  Buffer<T> out(x.data().begin(), x.data().end());
  auto vv = v.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* row = out.data() + (i * c + ch) * inner;
      for (std::size_t p = 0; p < inner; ++p) row[p] += vv[ch];
    }
  auto* tape = tape_for<T>({&x, &v});
  auto result = make_output("add_channel", x.shape(), std::move(out), tape != nullptr);
  if (tape) {
    auto nx = x.node(), nv = v.node(), no = result.node();
    tape->record("add_channel", {nx, nv}, no, [nx, nv, no, n, c, inner] {
      if (wants_grad(nx))
        for (std::size_t i = 0; i < no->grad.size(); ++i) nx->grad[i] += no->grad[i];
      if (wants_grad(nv)) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          double acc = 0;
          for (std::size_t i = 0; i < n; ++i) {
            const T* row = no->grad.data() + (i * c + ch) * inner;
            for (std::size_t p = 0; p < inner; ++p) acc += row[p];
          }
          nv->grad[ch] += static_cast<T>(acc);
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Convolutions

namespace {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, k, stride, pad, hout, wout;
  std::size_t patch() const { return cin * k * k; }
  std::size_t cols() const { return n * hout * wout; }
};

// Output columns ox whose source column ox*stride + kx - pad lies inside the row.
inline std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kx) {
  std::size_t lo = 0;
  while (lo < g.wout && lo * g.stride + kx < g.pad) ++lo;
  std::size_t hi = g.wout;
  while (hi > lo && (hi - 1) * g.stride + kx >= g.pad + g.w) --hi;
  return {lo, hi};
}

// col is (cin*k*k, n*hout*wout), rows ordered (ci, ky, kx), columns (n, oy, ox).
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const auto cols = g.cols();
  const auto plane = g.hout * g.wout;
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* dst = col + ((ci * g.k + ky) * g.k + kx) * cols;
        for (std::size_t i = 0; i < g.n; ++i) {
          const T* src = x + (i * g.cin + ci) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.hout; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            T* drow = dst + i * plane + oy * g.wout;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill(drow, drow + g.wout, T(0));
              continue;
            }
            const T* srow = src + iy * g.w;
            const auto [lo, hi] = valid_columns(g, kx);
            std::fill(drow, drow + lo, T(0));
            std::fill(drow + hi, drow + g.wout, T(0));
            const T* s = srow + (lo * g.stride + kx - g.pad);
            if (g.stride == 1) {
              std::copy(s, s + (hi - lo), drow + lo);
            } else {
              for (std::size_t ox = lo; ox < hi; ++ox, s += g.stride) drow[ox] = *s;
            }
          }
        }
      }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* dx) {
  const auto cols = g.cols();
  const auto plane = g.hout * g.wout;
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* srcc = col + ((ci * g.k + ky) * g.k + kx) * cols;
        for (std::size_t i = 0; i < g.n; ++i) {
          T* dst = dx + (i * g.cin + ci) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.hout; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            const T* srow = srcc + i * plane + oy * g.wout;
            T* drow = dst + iy * g.w;
            const auto [lo, hi] = valid_columns(g, kx);
            T* d = drow + (lo * g.stride + kx - g.pad);
            for (std::size_t ox = lo; ox < hi; ++ox, d += g.stride) *d += srow[ox];
          }
        }
      }
}


// Stride-1 convolution as k*k shifted GEMMs over a zero-padded copy of each
// sample. Outputs are computed on the padded row pitch and the k-1 surplus
// columns per row are dropped (forward) or zeroed (backward).
template <typename T>
struct ShiftedConv {
  using StridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
  using MutStridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

  ConvGeometry g;
  std::size_t hp, wp, chan, span;

  explicit ShiftedConv(const ConvGeometry& geo)
      : g(geo), hp(geo.h + 2 * geo.pad), wp(geo.w + 2 * geo.pad), chan(hp * wp + geo.k), span(geo.h * wp) {}

  std::size_t padded_size() const { return g.cin * chan; }

  void pad(const T* x, T* xp) const {
    std::fill(xp, xp + padded_size(), T(0));
    for (std::size_t c = 0; c < g.cin; ++c)
      for (std::size_t y = 0; y < g.h; ++y)
        std::copy_n(x + (c * g.h + y) * g.w, g.w, xp + c * chan + (y + g.pad) * wp + g.pad);
  }

  // Taps as (k*k) blocks of (cout, cin).
  void gather_taps(const T* w, T* taps) const {
    const auto kk = g.k * g.k;
    for (std::size_t o = 0; o < g.cout; ++o)
      for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t t = 0; t < kk; ++t) taps[(t * g.cout + o) * g.cin + c] = w[(o * g.cin + c) * kk + t];
  }

  std::size_t offset(std::size_t t) const { return (t / g.k) * wp + t % g.k; }
};
template <typename T>
BasicTensor<T> conv2d_shifted(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                              const ConvGeometry& g) {
  using SC = ShiftedConv<T>;
  const SC sc(g);
  const auto plane = g.h * g.w, kk = g.k * g.k, in_size = g.cin * plane;
  Buffer<T> taps(kk * g.cout * g.cin);
  sc.gather_taps(weight.data().data(), taps.data());
  thread_local Buffer<T> xp, yp;
  xp.resize(sc.padded_size());
  yp.resize(g.cout * sc.span);
  Buffer<T> out(g.n * g.cout * plane);
  for (std::size_t i = 0; i < g.n; ++i) {
    sc.pad(x.data().data() + i * in_size, xp.data());
    MatMap<T> y(yp.data(), g.cout, sc.span);
    for (std::size_t t = 0; t < kk; ++t) {
      ConstMatMap<T> wt(taps.data() + t * g.cout * g.cin, g.cout, g.cin);
      typename SC::StridedMap xs(xp.data() + sc.offset(t), g.cin, sc.span, Eigen::OuterStride<>(sc.chan));
      if (t == 0) {
        y.noalias() = wt * xs;
      } else {
        y.noalias() += wt * xs;
      }
    }
    for (std::size_t o = 0; o < g.cout; ++o) {
      const T b = bias.defined() ? bias.data()[o] : T(0);
      for (std::size_t r = 0; r < g.h; ++r) {
        const T* src = yp.data() + o * sc.span + r * sc.wp;
        T* dst = out.data() + ((i * g.cout + o) * g.h + r) * g.w;
        for (std::size_t c = 0; c < g.w; ++c) dst[c] = src[c] + b;
      }
    }
  }

  auto* tape = tape_for<T>({&x, &weight, &bias});
  auto result = make_output("conv2d", Shape{g.n, g.cout, g.h, g.w}, std::move(out), tape != nullptr);
  if (tape) {
    auto nx = x.node(), nw = weight.node(), nb = bias.node(), no = result.node();
    tape->record("conv2d", nodes<T>({&x, &weight, &bias}), no, [nx, nw, nb, no, g, taps = std::move(taps)] {
      const SC sc(g);
      const auto plane = g.h * g.w, kk = g.k * g.k, in_size = g.cin * plane;
      thread_local Buffer<T> xp, dxp, dyp;
      xp.resize(sc.padded_size());
      dxp.resize(sc.padded_size());
      dyp.resize(g.cout * sc.span);
      Buffer<T> dtaps(wants_grad(nw) ? kk * g.cout * g.cin : 0, T(0));
      if (wants_grad(nb)) {
        for (std::size_t o = 0; o < g.cout; ++o) {
          double acc = 0;
          for (std::size_t i = 0; i < g.n; ++i) {
            const T* row = no->grad.data() + (i * g.cout + o) * plane;
            for (std::size_t j = 0; j < plane; ++j) acc += row[j];
          }
          nb->grad[o] += static_cast<T>(acc);
        }
      }
      for (std::size_t i = 0; i < g.n; ++i) {
        std::fill(dyp.begin(), dyp.end(), T(0));
        for (std::size_t o = 0; o < g.cout; ++o)
          for (std::size_t r = 0; r < g.h; ++r)
            std::copy_n(no->grad.data() + ((i * g.cout + o) * g.h + r) * g.w, g.w,
                        dyp.data() + o * sc.span + r * sc.wp);
        ConstMatMap<T> dy(dyp.data(), g.cout, sc.span);
        if (wants_grad(nw)) {
          sc.pad(nx->data.data() + i * in_size, xp.data());
          for (std::size_t t = 0; t < kk; ++t) {
            typename SC::StridedMap xs(xp.data() + sc.offset(t), g.cin, sc.span, Eigen::OuterStride<>(sc.chan));
            MatMap<T>(dtaps.data() + t * g.cout * g.cin, g.cout, g.cin).noalias() += dy * xs.transpose();
          }
        }
        if (wants_grad(nx)) {
          std::fill(dxp.begin(), dxp.end(), T(0));
          for (std::size_t t = 0; t < kk; ++t) {
            typename SC::MutStridedMap dxs(dxp.data() + sc.offset(t), g.cin, sc.span, Eigen::OuterStride<>(sc.chan));
            dxs.noalias() += ConstMatMap<T>(taps.data() + t * g.cout * g.cin, g.cout, g.cin).transpose() * dy;
          }
          T* dx = nx->grad.data() + i * in_size;
          for (std::size_t c = 0; c < g.cin; ++c)
            for (std::size_t y = 0; y < g.h; ++y) {
              const T* src = dxp.data() + c * sc.chan + (y + g.pad) * sc.wp + g.pad;
              T* dst = dx + (c * g.h + y) * g.w;
              for (std::size_t xx = 0; xx < g.w; ++xx) dst[xx] += src[xx];
            }
        }
      }
      if (wants_grad(nw)) {
        for (std::size_t o = 0; o < g.cout; ++o)
          for (std::size_t c = 0; c < g.cin; ++c)
            for (std::size_t t = 0; t < kk; ++t)
              nw->grad[(o * g.cin + c) * kk + t] += dtaps[(t * g.cout + o) * g.cin + c];
      }
    });
  }
  return result;
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      std::size_t stride) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) || weight.dim(2) != weight.dim(3) ||
      weight.dim(2) % 2 == 0) {
    shape_error("conv2d", "input " + shape_str(x.shape()) + " incompatible with kernel " + shape_str(weight.shape()));
  }
  if (stride != 1 && stride != 2) shape_error("conv2d", "stride must be 1 or 2");
  if (bias.defined() && bias.numel() != weight.dim(0)) {
    shape_error("conv2d", "bias " + shape_str(bias.shape()) + " does not match kernel " + shape_str(weight.shape()));
  }
  ConvGeometry g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.pad = g.k / 2;
  g.hout = (g.h + 2 * g.pad - g.k) / stride + 1;
  g.wout = (g.w + 2 * g.pad - g.k) / stride + 1;

  const auto plane = g.hout * g.wout;
  if (stride == 1) return conv2d_shifted(x, weight, bias, g);
  ConvGeometry one = g;
  one.n = 1;
  const auto in_size = g.cin * g.h * g.w;
  // Per-sample column buffers stay cache resident; backward rebuilds them.
  thread_local Buffer<T> col;
  col.resize(g.patch() * plane);
  ConstMatMap<T> wmat(weight.data().data(), g.cout, g.patch());
  Buffer<T> out(g.n * g.cout * plane);
  for (std::size_t i = 0; i < g.n; ++i) {
    im2col(x.data().data() + i * in_size, one, col.data());
    MatMap<T> y(out.data() + i * g.cout * plane, g.cout, plane);
    y.noalias() = wmat * ConstMatMap<T>(col.data(), g.patch(), plane);
    if (bias.defined()) y.colwise() += ConstMatMap<T>(bias.data().data(), g.cout, 1).col(0);
  }

  auto* tape = tape_for<T>({&x, &weight, &bias});
  auto result = make_output("conv2d", Shape{g.n, g.cout, g.hout, g.wout}, std::move(out), tape != nullptr);
  if (tape) {
    auto nx = x.node(), nw = weight.node(), nb = bias.node(), no = result.node();
    tape->record("conv2d", nodes<T>({&x, &weight, &bias}), no, [nx, nw, nb, no, g, one, in_size] {
      const auto plane = g.hout * g.wout;
      thread_local Buffer<T> col, dcol;
      col.resize(g.patch() * plane);
      dcol.resize(g.patch() * plane);
      if (wants_grad(nb)) {
        for (std::size_t co = 0; co < g.cout; ++co) {
          double acc = 0;
          for (std::size_t i = 0; i < g.n; ++i) {
            const T* row = no->grad.data() + (i * g.cout + co) * plane;
            for (std::size_t j = 0; j < plane; ++j) acc += row[j];
          }
          nb->grad[co] += static_cast<T>(acc);
        }
      }
      for (std::size_t i = 0; i < g.n; ++i) {
        ConstMatMap<T> dy(no->grad.data() + i * g.cout * plane, g.cout, plane);
        if (wants_grad(nw)) {
          im2col(nx->data.data() + i * in_size, one, col.data());
          MatMap<T>(nw->grad.data(), g.cout, g.patch()).noalias() +=
              dy * ConstMatMap<T>(col.data(), g.patch(), plane).transpose();
        }
        if (wants_grad(nx)) {
          MatMap<T>(dcol.data(), g.patch(), plane).noalias() =
              ConstMatMap<T>(nw->data.data(), g.cout, g.patch()).transpose() * dy;
          col2im(dcol.data(), one, nx->grad.data() + i * in_size);
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> temporal_conv(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  if (x.rank() != 4 || weight.rank() != 3 || weight.dim(2) != 3 || weight.dim(1) != x.dim(1)) {
    shape_error("temporal_conv", "input " + shape_str(x.shape()) + " incompatible with kernel " +
                                     shape_str(weight.shape()));
  }
  if (bias.defined() && bias.numel() != weight.dim(0)) {
    shape_error("temporal_conv", "bias " + shape_str(bias.shape()) + " does not match kernel " +
                                     shape_str(weight.shape()));
  }
  const auto frames = x.dim(0), cin = x.dim(1), cout = weight.dim(0);
  const auto plane = x.dim(2) * x.dim(3);

  // Per-tap (cout, cin) matrices.
  std::vector<RowMat<T>> taps(3, RowMat<T>(cout, cin));
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t k = 0; k < 3; ++k) taps[k](co, ci) = weight.data()[(co * cin + ci) * 3 + k];

  Buffer<T> out(frames * cout * plane, T(0));
  for (std::size_t f = 0; f < frames; ++f) {
    MatMap<T> of(out.data() + f * cout * plane, cout, plane);
    for (std::size_t k = 0; k < 3; ++k) {
      const auto src = static_cast<std::ptrdiff_t>(f + k) - 1;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
      of.noalias() += taps[k] * ConstMatMap<T>(x.data().data() + src * cin * plane, cin, plane);
    }
    if (bias.defined()) {
      for (std::size_t co = 0; co < cout; ++co) of.row(co).array() += bias.data()[co];
    }
  }

  auto* tape = tape_for<T>({&x, &weight, &bias});
  auto result = make_output("temporal_conv", Shape{frames, cout, x.dim(2), x.dim(3)}, std::move(out), tape != nullptr);
  if (tape) {
    auto nx = x.node(), nw = weight.node(), nb = bias.node(), no = result.node();
    tape->record("temporal_conv", nodes<T>({&x, &weight, &bias}), no,
                 [nx, nw, nb, no, frames, cin, cout, plane, taps = std::move(taps)] {
                   std::vector<RowMat<T>> dtaps(3, RowMat<T>::Zero(cout, cin));
                   for (std::size_t f = 0; f < frames; ++f) {
                     ConstMatMap<T> dy(no->grad.data() + f * cout * plane, cout, plane);
                     for (std::size_t k = 0; k < 3; ++k) {
                       const auto src = static_cast<std::ptrdiff_t>(f + k) - 1;
                       if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
                       if (wants_grad(nw))
                         dtaps[k].noalias() +=
                             dy * ConstMatMap<T>(nx->data.data() + src * cin * plane, cin, plane).transpose();
                       if (wants_grad(nx))
                         MatMap<T>(nx->grad.data() + src * cin * plane, cin, plane).noalias() +=
                             taps[k].transpose() * dy;
                     }
                   }
                   if (wants_grad(nw)) {
                     for (std::size_t co = 0; co < cout; ++co)
                       for (std::size_t ci = 0; ci < cin; ++ci)
                         for (std::size_t k = 0; k < 3; ++k) nw->grad[(co * cin + ci) * 3 + k] += dtaps[k](co, ci);
                   }
                   if (wants_grad(nb)) {
                     for (std::size_t co = 0; co < cout; ++co) {
                       double acc = 0;
                       for (std::size_t f = 0; f < frames; ++f) {
                         const T* row = no->grad.data() + (f * cout + co) * plane;
                         for (std::size_t p = 0; p < plane; ++p) acc += row[p];
                       }
                       nb->grad[co] += static_cast<T>(acc);
                     }
                   }
                 });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Normalization and attention

template <typename T>
BasicTensor<T> group_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          std::size_t groups, double eps) {
  if (x.rank() < 2 || groups == 0 || x.dim(1) % groups != 0) {
    shape_error("group_norm", "input " + shapes(x) + " cannot be split into " + std::to_string(groups) + " groups");
  }
  const auto n = x.dim(0), c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c) {
    shape_error("group_norm", "affine " + shapes(gamma, beta) + " does not match channels of " + shapes(x));
  }
  const auto inner = x.numel() / (n * c);
  const auto per_group = c / groups;
  const auto count = per_group * inner;

  Buffer<T> xhat(x.numel());
  Buffer<T> inv_std(n * groups);
  Buffer<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t g = 0; g < groups; ++g) {
      const auto base = (i * c + g * per_group) * inner;
      double s = 0;
      for (std::size_t j = 0; j < count; ++j) s += xv[base + j];
      const double mu = s / static_cast<double>(count);
      double ss = 0;
      for (std::size_t j = 0; j < count; ++j) {
        const double d = xv[base + j] - mu;
        ss += d * d;
      }
      const double var = ss / static_cast<double>(count);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[i * groups + g] = static_cast<T>(is);
      for (std::size_t j = 0; j < count; ++j) {
        xhat[base + j] = static_cast<T>((xv[base + j] - mu) * is);
      }
      for (std::size_t cc = 0; cc < per_group; ++cc) {
        const auto ch = g * per_group + cc;
        const T ga = gamma.data()[ch], be = beta.data()[ch];
        for (std::size_t p = 0; p < inner; ++p) {
          const auto idx = base + cc * inner + p;
          out[idx] = ga * xhat[idx] + be;
        }
      }
    }

  auto* tape = tape_for<T>({&x, &gamma, &beta});
  auto result = make_output("group_norm", x.shape(), std::move(out), tape != nullptr);
  if (tape) {
    auto nx = x.node(), ng = gamma.node(), nbt = beta.node(), no = result.node();
    tape->record("group_norm", {nx, ng, nbt}, no,
                 [nx, ng, nbt, no, n, c, inner, groups, per_group, count, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)] {
                   const auto& dy = no->grad;
                   if (wants_grad(ng) || wants_grad(nbt)) {
                     for (std::size_t ch = 0; ch < c; ++ch) {
                       double dg = 0, db = 0;
                       for (std::size_t i = 0; i < n; ++i) {
                         const auto base = (i * c + ch) * inner;
                         for (std::size_t p = 0; p < inner; ++p) {
                           dg += static_cast<double>(dy[base + p]) * xhat[base + p];
                           db += dy[base + p];
                         }
                       }
                       if (wants_grad(ng)) ng->grad[ch] += static_cast<T>(dg);
                       if (wants_grad(nbt)) nbt->grad[ch] += static_cast<T>(db);
                     }
                   }
                   if (!wants_grad(nx)) return;
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t g = 0; g < groups; ++g) {
                       const auto base = (i * c + g * per_group) * inner;
                       double m1 = 0, m2 = 0;
                       for (std::size_t cc = 0; cc < per_group; ++cc) {
                         const double ga = ng->data[g * per_group + cc];
                         for (std::size_t p = 0; p < inner; ++p) {
                           const auto idx = base + cc * inner + p;
                           const double dxh = dy[idx] * ga;
                           m1 += dxh;
                           m2 += dxh * xhat[idx];
                         }
                       }
                       m1 /= static_cast<double>(count);
                       m2 /= static_cast<double>(count);
                       const double is = inv_std[i * groups + g];
                       for (std::size_t cc = 0; cc < per_group; ++cc) {
                         const double ga = ng->data[g * per_group + cc];
                         for (std::size_t p = 0; p < inner; ++p) {
                           const auto idx = base + cc * inner + p;
                           const double dxh = dy[idx] * ga;
                           nx->grad[idx] += static_cast<T>(is * (dxh - m1 - xhat[idx] * m2));
                         }
                       }
                     }
                 });
  }
  return result;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) shape_error("softmax", "axis " + std::to_string(axis) + " out of range for " + shapes(x));
  const auto len = x.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  Buffer<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const auto base = o * len * inner + in;
      T mx = xv[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0;
      for (std::size_t j = 0; j < len; ++j) z += std::exp(static_cast<double>(xv[base + j * inner] - mx));
      for (std::size_t j = 0; j < len; ++j)
        out[base + j * inner] = static_cast<T>(std::exp(static_cast<double>(xv[base + j * inner] - mx)) / z);
    }

  auto* tape = tape_for<T>({&x});
  auto result = make_output("softmax", x.shape(), std::move(out), tape != nullptr);
  if (tape) {
    auto nx = x.node(), no = result.node();
    tape->record("softmax", {nx}, no, [nx, no, outer, inner, len] {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const auto base = o * len * inner + in;
          double dot = 0;
          for (std::size_t j = 0; j < len; ++j)
            dot += static_cast<double>(no->grad[base + j * inner]) * no->data[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const auto idx = base + j * inner;
            nx->grad[idx] += static_cast<T>(no->data[idx] * (no->grad[idx] - dot));
          }
        }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.dim(0) != k.dim(0) || k.dim(0) != v.dim(0) ||
      q.dim(2) != k.dim(2) || k.dim(1) != v.dim(1)) {
    shape_error("attention", "incompatible q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                                 shape_str(v.shape()));
  }
  const auto batch = q.dim(0), n = q.dim(1), m = k.dim(1), d = q.dim(2), dv = v.dim(2);
  const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

  Buffer<T> probs(batch * n * m);
  Buffer<T> out(batch * n * dv);
  for (std::size_t b = 0; b < batch; ++b) {
    MatMap<T> p(probs.data() + b * n * m, n, m);
    p.noalias() = ConstMatMap<T>(q.data().data() + b * n * d, n, d) *
                  ConstMatMap<T>(k.data().data() + b * m * d, m, d).transpose();
    for (std::size_t i = 0; i < n; ++i) {
      auto row = p.row(i).array();
      row *= inv_sqrt_d;
      row = (row - row.maxCoeff()).exp();
      const double z = row.template cast<double>().sum();
      row = (row.template cast<double>() / z).template cast<T>();
    }
    MatMap<T>(out.data() + b * n * dv, n, dv).noalias() = p * ConstMatMap<T>(v.data().data() + b * m * dv, m, dv);
  }

  auto* tape = tape_for<T>({&q, &k, &v});
  auto result = make_output("attention", Shape{batch, n, dv}, std::move(out), tape != nullptr);
  if (tape) {
    auto nq = q.node(), nk = k.node(), nv = v.node(), no = result.node();
    tape->record("attention", {nq, nk, nv}, no,
                 [nq, nk, nv, no, batch, n, m, d, dv, inv_sqrt_d, probs = std::move(probs)] {
                   for (std::size_t b = 0; b < batch; ++b) {
                     ConstMatMap<T> p(probs.data() + b * n * m, n, m);
                     ConstMatMap<T> dout(no->grad.data() + b * n * dv, n, dv);
                     if (wants_grad(nv))
                       MatMap<T>(nv->grad.data() + b * m * dv, m, dv).noalias() += p.transpose() * dout;
                     if (!wants_grad(nq) && !wants_grad(nk)) continue;
                     RowMat<T> dp = dout * ConstMatMap<T>(nv->data.data() + b * m * dv, m, dv).transpose();
                     for (std::size_t i = 0; i < n; ++i) {
                       double dot = 0;
                       for (std::size_t j = 0; j < m; ++j) dot += static_cast<double>(dp(i, j)) * p(i, j);
                       for (std::size_t j = 0; j < m; ++j)
                         dp(i, j) = static_cast<T>(p(i, j) * (dp(i, j) - dot)) * inv_sqrt_d;
                     }
                     if (wants_grad(nq))
                       MatMap<T>(nq->grad.data() + b * n * d, n, d).noalias() +=
                           dp * ConstMatMap<T>(nk->data.data() + b * m * d, m, d);
                     if (wants_grad(nk))
                       MatMap<T>(nk->grad.data() + b * m * d, m, d).noalias() +=
                           dp.transpose() * ConstMatMap<T>(nq->data.data() + b * n * d, n, d);
                   }
                 });
  }
  return result;
}

template <typename T>
BasicTensor<T> sinusoidal_embedding(std::span<const double> values, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) shape_error("sinusoidal_embedding", "dimension must be even, got " + std::to_string(dim));
  if (values.empty()) shape_error("sinusoidal_embedding", "no values");
  const auto half = dim / 2;
  Buffer<T> out(values.size() * dim);
  for (std::size_t r = 0; r < values.size(); ++r)
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      out[r * dim + i] = static_cast<T>(std::sin(values[r] * freq));
      out[r * dim + half + i] = static_cast<T>(std::cos(values[r] * freq));
    }
  return BasicTensor<T>(Shape{values.size(), dim}, std::move(out));
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
BasicTensor<T> concat(const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t axis) {
  bool ok = a.rank() == b.rank() && axis < a.rank();
  for (std::size_t i = 0; ok && i < a.rank(); ++i) ok = (i == axis) || a.dim(i) == b.dim(i);
  if (!ok) shape_error("concat", "cannot join " + shapes(a, b) + " on axis " + std::to_string(axis));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const auto sa = a.dim(axis) * inner, sb = b.dim(axis) * inner;
  Buffer<T> out(a.numel() + b.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data().data() + o * sa, sa, out.data() + o * (sa + sb));
    std::copy_n(b.data().data() + o * sb, sb, out.data() + o * (sa + sb) + sa);
  }
  Shape shape = a.shape();
  shape[axis] += b.dim(axis);
  auto* tape = tape_for<T>({&a, &b});
  auto result = make_output("concat", std::move(shape), std::move(out), tape != nullptr);
  if (tape) {
    auto na = a.node(), nb = b.node(), no = result.node();
    tape->record("concat", {na, nb}, no, [na, nb, no, outer, sa, sb] {
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = no->grad.data() + o * (sa + sb);
        if (wants_grad(na))
          for (std::size_t j = 0; j < sa; ++j) na->grad[o * sa + j] += src[j];
        if (wants_grad(nb))
          for (std::size_t j = 0; j < sb; ++j) nb->grad[o * sb + j] += src[sa + j];
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x) {
  if (x.rank() != 4) shape_error("upsample_nearest2x", "expected (N, C, H, W), got " + shapes(x));
  const auto planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Buffer<T> out(planes * 4 * h * w);
  auto xv = x.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(p * 2 * h + y) * 2 * w + xx] = xv[(p * h + y / 2) * w + xx / 2];
  auto* tape = tape_for<T>({&x});
  auto result = make_output("upsample_nearest2x", Shape{x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), tape != nullptr);
  if (tape) {
    auto nx = x.node(), no = result.node();
    tape->record("upsample_nearest2x", {nx}, no, [nx, no, planes, h, w] {
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < 2 * h; ++y)
          for (std::size_t xx = 0; xx < 2 * w; ++xx)
            nx->grad[(p * h + y / 2) * w + xx / 2] += no->grad[(p * 2 * h + y) * 2 * w + xx];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& axes) {
  const auto r = x.rank();
  std::vector<bool> seen(r, false);
  bool ok = axes.size() == r;
  for (std::size_t i = 0; ok && i < r; ++i) {
    ok = axes[i] < r && !seen[axes[i]];
    if (ok) seen[axes[i]] = true;
  }
  if (!ok) shape_error("permute", "invalid axis order for " + shapes(x));

  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  // Source offset for each output element, walked as an odometer.
  std::vector<std::size_t> src_index(x.numel());
  {
    std::vector<std::size_t> idx(r, 0), step(r);
    for (std::size_t i = 0; i < r; ++i) step[i] = in_strides[axes[i]];
    const auto last = r - 1;
    std::size_t off = 0, flat = 0;
    if (r == 0) src_index[flat++] = 0;
    while (flat < x.numel()) {
      for (std::size_t j = 0; j < out_shape[last]; ++j) src_index[flat++] = off + j * step[last];
      std::size_t i = last;
      while (i-- > 0) {
        off += step[i];
        if (++idx[i] < out_shape[i]) break;
        off -= idx[i] * step[i];
        idx[i] = 0;
      }
    }
  }
  Buffer<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[src_index[i]];
  auto* tape = tape_for<T>({&x});
  auto result = make_output("permute", std::move(out_shape), std::move(out), tape != nullptr);
  if (tape) {
    auto nx = x.node(), no = result.node();
    tape->record("permute", {nx}, no, [nx, no, src_index = std::move(src_index)] {
      for (std::size_t i = 0; i < src_index.size(); ++i) nx->grad[src_index[i]] += no->grad[i];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    shape_error("reshape", "cannot view " + shapes(x) + " as " + shape_str(shape));
  }
  Buffer<T> out(x.data().begin(), x.data().end());
  auto* tape = tape_for<T>({&x});
  auto result = make_output("reshape", std::move(shape), std::move(out), tape != nullptr);
  if (tape) {
    auto nx = x.node(), no = result.node();
    tape->record("reshape", {nx}, no, [nx, no] {
      for (std::size_t i = 0; i < no->grad.size(); ++i) nx->grad[i] += no->grad[i];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double acc = 0;
  for (auto v : x.data()) acc += v;
  auto* tape = tape_for<T>({&x});
  auto result = make_output("sum", Shape{1}, Buffer<T>{static_cast<T>(acc)}, tape != nullptr);
  if (tape) {
    auto nx = x.node(), no = result.node();
    tape->record("sum", {nx}, no, [nx, no] {
      for (auto& g : nx->grad) g += no->grad[0];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  double acc = 0;
  for (auto v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  auto* tape = tape_for<T>({&x});
  auto result = make_output("mean", Shape{1}, Buffer<T>{static_cast<T>(acc / n)}, tape != nullptr);
  if (tape) {
    auto nx = x.node(), no = result.node();
    tape->record("mean", {nx}, no, [nx, no, n] {
      const T g = static_cast<T>(no->grad[0] / n);
      for (auto& v : nx->grad) v += g;
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  if (pred.shape() != target.shape()) shape_error("mse_loss", "shape mismatch " + shapes(pred, target));
  double acc = 0;
  auto p = pred.data();
  auto t = target.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    acc += d * d;
  }
  const double n = static_cast<double>(p.size());
  auto* tape = tape_for<T>({&pred, &target});
  auto result = make_output("mse_loss", Shape{1}, Buffer<T>{static_cast<T>(acc / n)}, tape != nullptr);
  if (tape) {
    auto np = pred.node(), nt = target.node(), no = result.node();
    tape->record("mse_loss", {np, nt}, no, [np, nt, no, n] {
      const double g = 2.0 * no->grad[0] / n;
      for (std::size_t i = 0; i < np->data.size(); ++i) {
        const T d = static_cast<T>(g * (static_cast<double>(np->data[i]) - nt->data[i]));
        if (wants_grad(np)) np->grad[i] += d;
        if (wants_grad(nt)) nt->grad[i] -= d;
      }
    });
  }
  return result;
}

#define M3D_INSTANTIATE_OPS(T)                                                                                  \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                    \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                    \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                    \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                      \
  template BasicTensor<T> silu(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> add_bias(const BasicTensor<T>&, const BasicTensor<T>&);                               \
  template BasicTensor<T> add_channel(const BasicTensor<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,           \
                                 std::size_t);                                                                  \
  template BasicTensor<T> temporal_conv(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> group_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,       \
                                     std::size_t, double);                                                      \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                                          \
  template BasicTensor<T> attention(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);       \
  template BasicTensor<T> sinusoidal_embedding<T>(std::span<const double>, std::size_t);                        \
  template BasicTensor<T> concat(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t);                    \
  template BasicTensor<T> upsample_nearest2x(const BasicTensor<T>&);                                            \
  template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<std::size_t>&);                      \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                                \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                           \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> mse_loss(const BasicTensor<T>&, const BasicTensor<T>&);

M3D_INSTANTIATE_OPS(float)
M3D_INSTANTIATE_OPS(double)

#undef M3D_INSTANTIATE_OPS

}  // namespace m3d
