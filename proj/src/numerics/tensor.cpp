#include "numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "common/error.hpp"

namespace boxprompt::num {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool t_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_mode_enabled() { return t_grad_enabled; }

template <typename T>
Tensor<T>::Tensor(Shape shape) : impl_(std::make_shared<TensorImpl<T>>()) {
  impl_->data.assign(shape_numel(shape), T(0));
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<TensorImpl<T>>()) {
  require(shape_numel(shape) == data.size(), ErrorKind::Shape,
          "tensor: shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) + " values");
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> data) {
  Tensor t(std::move(shape), std::move(data));
  t.impl_->requires_grad = true;
  return t;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  require(impl_->node == nullptr, ErrorKind::State, "tensor: cannot mutate the output of a recorded op");
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  require(impl_->data.size() == 1, ErrorKind::Shape, "item() on tensor of shape " + shape_str(impl_->shape));
  return impl_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  require(impl_->node == nullptr, ErrorKind::State, "requires_grad can only be set on leaves");
  impl_->requires_grad = on;
}

template <typename T>
void Tensor<T>::zero_grad() {
  impl_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data);
}

template <typename T>
Tensor<T> Tensor<T>::wrap(std::shared_ptr<TensorImpl<T>> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                      BackwardFn<T> backward) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      fail(ErrorKind::Numeric, std::string("non-finite value produced by ") + op + " at element " + std::to_string(i) +
                                   " of " + shape_str(shape));
    }
  }
  Tensor<T> out(std::move(shape), std::move(data));
  if (!t_grad_enabled) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  if (!needs) return out;
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->inputs.reserve(inputs.size());
  for (const auto& in : inputs) node->inputs.push_back(in.impl());
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  require(loss.numel() == 1, ErrorKind::Shape, "backward: loss must be scalar, got " + shape_str(loss.shape()));
  require(loss.requires_grad(), ErrorKind::State, "backward: loss does not depend on any parameter");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> visited;
  std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      TensorImpl<T>* child = impl->node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  for (auto* impl : order) {
    if (impl->node) impl->grad.assign(impl->data.size(), T(0));
  }
  loss.impl()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* impl = *it;
    if (impl->node && impl->node->backward) impl->node->backward(*impl);
  }
}

template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> make_result(const char*, Shape, std::vector<float>, const std::vector<Tensor<float>>&,
                                   BackwardFn<float>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>, const std::vector<Tensor<double>>&,
                                    BackwardFn<double>);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace boxprompt::num
