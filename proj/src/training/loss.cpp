#include "training/loss.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"

namespace boxprompt::training {

template <typename T>
num::Tensor<T> bce_loss(const num::Tensor<T>& pred, const num::Tensor<T>& target, bool class_balanced) {
  require(pred.shape() == target.shape(), ErrorKind::Shape,
          "bce_loss: prediction " + num::shape_str(pred.shape()) + " vs target " + num::shape_str(target.shape()));
  const std::size_t n = pred.numel();
  require(n > 0, ErrorKind::Shape, "bce_loss: empty input");
  const auto p = pred.data();
  const auto t = target.data();
  for (std::size_t i = 0; i < n; ++i)
    if (t[i] != T(0) && t[i] != T(1)) fail(ErrorKind::InvalidArgument, "bce_loss: target must be binary");

  double w_pos = 1.0, w_neg = 1.0;
  if (class_balanced) {
    const auto pos = static_cast<double>(std::count(t.begin(), t.end(), T(1)));
    const auto neg = static_cast<double>(n) - pos;
    if (pos > 0 && neg > 0) {
      w_pos = 0.5 * static_cast<double>(n) / pos;
      w_neg = 0.5 * static_cast<double>(n) / neg;
    }
  }
  const double lo = kProbClamp, hi = 1.0 - kProbClamp;
  // Compensated sum: finite-difference checks of the loss sit close to the
  // rounding floor, so the plain running sum is not accurate enough.
  double sum = 0.0, carry = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp(static_cast<double>(p[i]), lo, hi);
    const double term = t[i] == T(1) ? -w_pos * std::log(q) : -w_neg * std::log1p(-q);
    const double next = sum + term;
    carry += std::abs(sum) >= std::abs(term) ? (sum - next) + term : (term - next) + sum;
    sum = next;
  }
  sum += carry;
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<T> out{static_cast<T>(sum * inv_n)};
  return num::make_result<T>("bce_loss", {1}, std::move(out), {pred},
                             [pred, target, w_pos, w_neg, inv_n, lo, hi](const num::TensorImpl<T>& o) {
                               if (!pred.requires_grad()) return;
                               auto g = pred.impl()->grad_buffer();
                               const auto p = pred.data();
                               const auto t = target.data();
                               const double go = static_cast<double>(o.grad[0]) * inv_n;
                               for (std::size_t i = 0; i < p.size(); ++i) {
                                 const double q = static_cast<double>(p[i]);
                                 if (q < lo || q > hi) continue;
                                 const double d = t[i] == T(1) ? -w_pos / q : w_neg / (1.0 - q);
                                 g[i] += static_cast<T>(go * d);
                               }
                             });
}

template num::Tensor<float> bce_loss<float>(const num::Tensor<float>&, const num::Tensor<float>&, bool);
template num::Tensor<double> bce_loss<double>(const num::Tensor<double>&, const num::Tensor<double>&, bool);

}  // namespace boxprompt::training
