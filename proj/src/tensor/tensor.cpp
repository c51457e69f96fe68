// SPDX-License-Identifier: Apache-2.0

#include "m3d/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace m3d {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, Buffer<T> data, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
  for (auto d : shape) {
    if (d == 0) throw std::invalid_argument("tensor: zero-sized dimension in shape " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return BasicTensor(std::move(shape), Buffer<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return BasicTensor(Shape{1}, Buffer<T>{value});
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw std::invalid_argument("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone(bool requires_grad) const {
  return BasicTensor(node_->shape, node_->data, requires_grad);
}

namespace {
template <typename T>
thread_local BasicTape<T>* g_active_tape = nullptr;
}  // namespace

template <typename T>
BasicTape<T>* active_tape() {
  return g_active_tape<T>;
}

template <typename T>
TapeScope<T>::TapeScope(BasicTape<T>& tape) : previous_(g_active_tape<T>) {
  g_active_tape<T> = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  g_active_tape<T> = previous_;
}

template <typename T>
void BasicTape<T>::record(std::string op, std::vector<NodePtr> inputs, NodePtr output,
                          std::function<void()> backward) {
  records_.push_back(Record{std::move(op), std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void BasicTape<T>::backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar tensor, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  auto& seed = loss.node()->grad;
  seed.assign(1, T(0));
  seed[0] = T(1);

  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    for (auto& input : it->inputs) {
      if (input->requires_grad) input->ensure_grad();
    }
    // An output never reached from the loss carries no gradient.
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class BasicTape<float>;
template class BasicTape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template BasicTape<float>* active_tape<float>();
template BasicTape<double>* active_tape<double>();

}  // namespace m3d
