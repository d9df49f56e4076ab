#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace boxprompt::num {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl;

template <typename T>
class Tensor;

// Accumulates the gradient of one op into its inputs. Receives the op's
// output (data and grad); inputs are captured by the closure.
template <typename T>
using BackwardFn = std::function<void(const TensorImpl<T>& out)>;

template <typename T>
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  BackwardFn<T> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;  // null for leaves and for results outside the graph

  // Grad buffer, allocated as zeros on first use.
  std::span<T> grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

// Dense row-major array with an optional recorded computation graph.
// Copies are shallow: two Tensor values may share one buffer.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape);  // zeros
  Tensor(Shape shape, std::vector<T> data);

  static Tensor full(Shape shape, T value);
  // Leaf that participates in differentiation.
  static Tensor parameter(Shape shape, std::vector<T> data);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  // Mutable access is limited to tensors not produced by a recorded op.
  std::span<T> mutable_data();
  T item() const;
  T operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad();

  // Same values, cut from the graph, own buffer.
  Tensor detach() const;
  bool is_leaf() const { return impl_->node == nullptr; }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<TensorImpl<T>> impl);

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// Builds the result of a differentiable op. Verifies every value is finite
// (throws a Numeric error naming the op otherwise) and records a graph node
// when any input requires grad and grad mode is on.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                      BackwardFn<T> backward);

// Reverse-mode sweep from a scalar. Leaf grads accumulate across calls;
// intermediate grads are reset at the start of each sweep.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace boxprompt::num
