// SPDX-License-Identifier: Apache-2.0

#include "m3d/random.hpp"

#include <stdexcept>

namespace m3d {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(splitmix64(seed ^ splitmix64(stream + 0x5851f42d4c957f2dull)));
}

double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

template <typename T>
BasicTensor<T> randn(Shape shape, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Buffer<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(normal(rng));
  return BasicTensor<T>(std::move(shape), std::move(values));
}

template BasicTensor<float> randn<float>(Shape, Rng&);
template BasicTensor<double> randn<double>(Shape, Rng&);

}  // namespace m3d
