#pragma once

#include <cstddef>
#include <vector>

#include "numerics/tensor.hpp"

namespace boxprompt::num {

// Cross-correlation. input [Cin,H,W], weight [Cout,Cin,kH,kW], bias [Cout].
// Output extent is (H + 2*padding - kH) / stride + 1, rounded down.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding);

// Bilinear resampling of [C,H,W] with half-pixel centres (align_corners = false):
// source = (dst + 0.5) * in / out - 0.5, clamped to the valid range.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, std::size_t out_h, std::size_t out_w);

// Binary element-wise ops accept identical shapes, or a single-channel
// [1,H,W] operand broadcast across the channels of a [C,H,W] operand.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset);
// 1 - a
template <typename T>
Tensor<T> one_minus(const Tensor<T>& a);

// Logistic function; results are kept strictly inside (0, 1).
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a);
// x * sigmoid(x); silu(0) == 0.
template <typename T>
Tensor<T> silu(const Tensor<T>& a);
// Bounds inclusive; the gradient passes only where lo <= x <= hi.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

enum class ReduceKind { Sum, Mean, Max };

// Reduces over the listed axes in row-major order. With keepdims the reduced
// extents stay as 1, otherwise they are removed (a full reduction yields [1]).
template <typename T>
Tensor<T> reduce(ReduceKind kind, const Tensor<T>& input, const std::vector<std::size_t>& axes, bool keepdims = false);

template <typename T>
Tensor<T> softmax(const Tensor<T>& input, std::size_t axis);

// [m,k] x [k,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);
// Concatenation along axis 0.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts);

}  // namespace boxprompt::num
