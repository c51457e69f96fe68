// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "m3d/tensor.hpp"

namespace m3d {

// Named trainable tensors, iterated in name order.
template <typename T>
class BasicParamStore {
 public:
  using Map = std::map<std::string, BasicTensor<T>>;

  // Registers `value` as a trainable parameter; names must be unique.
  BasicTensor<T>& add(const std::string& name, BasicTensor<T> value);
  const BasicTensor<T>& get(const std::string& name) const;
  BasicTensor<T>& get(const std::string& name);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  void zero_grad();
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  typename Map::const_iterator begin() const { return entries_.begin(); }
  typename Map::const_iterator end() const { return entries_.end(); }
  typename Map::iterator begin() { return entries_.begin(); }
  typename Map::iterator end() { return entries_.end(); }

  // Copy with every value converted to U; gradients are not carried.
  template <typename U>
  BasicParamStore<U> cast() const {
    BasicParamStore<U> out;
    for (const auto& [name, t] : entries_) {
      std::vector<U> values(t.data().begin(), t.data().end());
      out.add(name, BasicTensor<U>(t.shape(), std::move(values), true));
    }
    return out;
  }

 private:
  Map entries_;
};

using ParamStore = BasicParamStore<float>;
using ParamStore64 = BasicParamStore<double>;

}  // namespace m3d
