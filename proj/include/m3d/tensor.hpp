// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a reverse-mode tape.
//
// A tensor is a shared handle onto a node holding shape, values and an
// optional gradient buffer. Ops record a backward rule on the thread's active
// tape only when a tape is installed (see TapeScope) and at least one input
// requires a gradient; with no tape installed, evaluation is pure and may run
// concurrently over shared read-only parameters.

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace m3d {

using Shape = std::vector<std::size_t>;

// Cache-line aligned storage. Vectorized kernels peel a scalar prologue up to
// the first aligned element, so results would otherwise depend on where the
// allocator placed a buffer; fixing the base alignment makes every op a pure
// function of its inputs and shapes.
inline constexpr std::size_t kBufferAlignment = 64;

template <typename T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kBufferAlignment)));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t(kBufferAlignment)); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorNode {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // empty until a backward pass touches the node
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, Buffer<T> data, bool requires_grad = false);
  BasicTensor(Shape shape, const std::vector<T>& data, bool requires_grad = false)
      : BasicTensor(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad) {}
  BasicTensor(Shape shape, std::initializer_list<T> data, bool requires_grad = false)
      : BasicTensor(std::move(shape), Buffer<T>(data), requires_grad) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Writable view for construction and optimizer updates only; never mutate
  // a tensor that has already been consumed by a recorded op.
  std::span<T> mutable_data() { return node_->data; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  T item() const;
  T at(std::size_t flat_index) const { return node_->data.at(flat_index); }

  // Deep copy detached from any tape.
  BasicTensor clone(bool requires_grad = false) const;

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Ordered record of differentiable ops. Records are appended as ops execute,
// so every record's inputs were produced by earlier records or are leaves.
template <typename T>
class BasicTape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;

  struct Record {
    std::string op;
    std::vector<NodePtr> inputs;
    NodePtr output;
    std::function<void()> backward;
  };

  void record(std::string op, std::vector<NodePtr> inputs, NodePtr output,
              std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and runs every record once in reverse order.
  // Gradients accumulate into leaves; every input seen on the tape ends with
  // an allocated (possibly zero) gradient buffer.
  void backward(const BasicTensor<T>& loss);

  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

 private:
  std::vector<Record> records_;
};

using Tape = BasicTape<float>;
using Tape64 = BasicTape<double>;

template <typename T>
BasicTape<T>* active_tape();

// Installs a tape as the calling thread's recording target for its lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(BasicTape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  BasicTape<T>* previous_;
};

}  // namespace m3d
