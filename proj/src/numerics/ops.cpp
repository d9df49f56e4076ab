#include "numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "common/error.hpp"
#include "numerics/gemm.hpp"

namespace boxprompt::num {

namespace {

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

// Adds `values` into the grad buffer of `impl` when it takes part in differentiation.
template <typename T>
T* grad_target(const ImplPtr<T>& impl) {
  return impl->requires_grad ? impl->grad_buffer().data() : nullptr;
}

void check_shape(bool cond, const char* op, const std::string& detail) {
  require(cond, ErrorKind::Shape, std::string(op) + ": " + detail);
}

// ---------------------------------------------------------------- conv2d

struct ConvGeometry {
  std::size_t cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;
  std::size_t rows() const { return cin * kh * kw; }
  std::size_t cols() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* dx) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// ------------------------------------------------------------ broadcasting

struct BinaryLayout {
  Shape out;
  std::size_t channels = 1;
  std::size_t plane = 0;
  bool a_bcast = false;
  bool b_bcast = false;
};

template <typename T>
BinaryLayout binary_layout(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  BinaryLayout l;
  if (a.shape() == b.shape()) {
    l.out = a.shape();
    l.plane = a.numel();
    return l;
  }
  const bool spatial = a.rank() == 3 && b.rank() == 3 && a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2);
  check_shape(spatial && (a.dim(0) == 1 || b.dim(0) == 1), op,
              "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " are not broadcastable");
  l.a_bcast = a.dim(0) == 1;
  l.b_bcast = b.dim(0) == 1;
  l.out = l.a_bcast ? b.shape() : a.shape();
  l.channels = l.out[0];
  l.plane = l.out[1] * l.out[2];
  return l;
}

enum class BinaryKind { Add, Sub, Mul };

template <typename T>
Tensor<T> binary(const char* op, BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  const BinaryLayout l = binary_layout(op, a, b);
  std::vector<T> out(shape_numel(l.out));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t c = 0; c < l.channels; ++c) {
    const T* ra = pa + (l.a_bcast ? 0 : c * l.plane);
    const T* rb = pb + (l.b_bcast ? 0 : c * l.plane);
    T* ro = out.data() + c * l.plane;
    switch (kind) {
      case BinaryKind::Add:
        for (std::size_t p = 0; p < l.plane; ++p) ro[p] = ra[p] + rb[p];
        break;
      case BinaryKind::Sub:
        for (std::size_t p = 0; p < l.plane; ++p) ro[p] = ra[p] - rb[p];
        break;
      case BinaryKind::Mul:
        for (std::size_t p = 0; p < l.plane; ++p) ro[p] = ra[p] * rb[p];
        break;
    }
  }
  ImplPtr<T> ia = a.impl();
  ImplPtr<T> ib = b.impl();
  return make_result<T>(op, l.out, std::move(out), {a, b}, [ia, ib, l, kind](const TensorImpl<T>& o) {
    T* ga = grad_target(ia);
    T* gb = grad_target(ib);
    const T* g = o.grad.data();
    for (std::size_t c = 0; c < l.channels; ++c) {
      const T* gc = g + c * l.plane;
      const std::size_t oa = l.a_bcast ? 0 : c * l.plane;
      const std::size_t ob = l.b_bcast ? 0 : c * l.plane;
      if (ga) {
        T* d = ga + oa;
        if (kind == BinaryKind::Mul) {
          const T* vb = ib->data.data() + ob;
          for (std::size_t p = 0; p < l.plane; ++p) d[p] += gc[p] * vb[p];
        } else {
          for (std::size_t p = 0; p < l.plane; ++p) d[p] += gc[p];
        }
      }
      if (gb) {
        T* d = gb + ob;
        if (kind == BinaryKind::Mul) {
          const T* va = ia->data.data() + oa;
          for (std::size_t p = 0; p < l.plane; ++p) d[p] += gc[p] * va[p];
        } else if (kind == BinaryKind::Sub) {
          for (std::size_t p = 0; p < l.plane; ++p) d[p] -= gc[p];
        } else {
          for (std::size_t p = 0; p < l.plane; ++p) d[p] += gc[p];
        }
      }
    }
  });
}

template <typename T>
T logistic(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding) {
  check_shape(input.rank() == 3, "conv2d", "input must be [C,H,W], got " + shape_str(input.shape()));
  check_shape(weight.rank() == 4, "conv2d", "weight must be [Cout,Cin,kH,kW], got " + shape_str(weight.shape()));
  check_shape(weight.dim(1) == input.dim(0), "conv2d",
              "weight " + shape_str(weight.shape()) + " does not match input " + shape_str(input.shape()));
  check_shape(bias.rank() == 1 && bias.dim(0) == weight.dim(0), "conv2d", "bias must be [Cout]");
  check_shape(weight.dim(2) % 2 == 1 && weight.dim(3) % 2 == 1, "conv2d", "kernel extents must be odd");
  require(stride >= 1 && padding >= 0, ErrorKind::InvalidArgument, "conv2d: stride >= 1 and padding >= 0 required");

  ConvGeometry g{};
  g.cin = input.dim(0);
  g.h = input.dim(1);
  g.w = input.dim(2);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  const long span_h = static_cast<long>(g.h) + 2L * padding - static_cast<long>(g.kh);
  const long span_w = static_cast<long>(g.w) + 2L * padding - static_cast<long>(g.kw);
  check_shape(span_h >= 0 && span_w >= 0, "conv2d", "kernel larger than padded input");
  g.ho = static_cast<std::size_t>(span_h / stride) + 1;
  g.wo = static_cast<std::size_t>(span_w / stride) + 1;

  auto col = std::make_shared<std::vector<T>>();
  const T* colp = input.data().data();
  if (!g.pointwise()) {
    col->resize(g.rows() * g.cols());
    im2col(g, input.data().data(), col->data());
    colp = col->data();
  }
  std::vector<T> out(g.cout * g.cols());
  gemm::nn(g.cout, g.cols(), g.rows(), weight.data().data(), colp, out.data(), false);
  const T* b = bias.data().data();
  for (std::size_t o = 0; o < g.cout; ++o) {
    T* row = out.data() + o * g.cols();
    for (std::size_t p = 0; p < g.cols(); ++p) row[p] += b[o];
  }

  ImplPtr<T> ix = input.impl();
  ImplPtr<T> iw = weight.impl();
  ImplPtr<T> ib = bias.impl();
  return make_result<T>(
      "conv2d", {g.cout, g.ho, g.wo}, std::move(out), {input, weight, bias}, [ix, iw, ib, g, col](const TensorImpl<T>& o) {
        const T* gy = o.grad.data();
        const T* colp = g.pointwise() ? ix->data.data() : col->data();
        if (T* gb = grad_target(ib)) {
          for (std::size_t c = 0; c < g.cout; ++c) {
            T acc = T(0);
            const T* row = gy + c * g.cols();
            for (std::size_t p = 0; p < g.cols(); ++p) acc += row[p];
            gb[c] += acc;
          }
        }
        if (T* gw = grad_target(iw)) {
          std::vector<T> colt(g.rows() * g.cols());
          gemm::transpose(g.rows(), g.cols(), colp, colt.data());
          gemm::nn(g.cout, g.rows(), g.cols(), gy, colt.data(), gw, true);
        }
        if (T* gx = grad_target(ix)) {
          if (g.pointwise()) {
            gemm::tn(g.rows(), g.cols(), g.cout, iw->data.data(), gy, gx, true);
          } else {
            std::vector<T> dcol(g.rows() * g.cols());
            gemm::tn(g.rows(), g.cols(), g.cout, iw->data.data(), gy, dcol.data(), false);
            col2im(g, dcol.data(), gx);
          }
        }
      });
}

namespace {

struct AxisTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

AxisTaps axis_taps(std::size_t in, std::size_t out) {
  AxisTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    t.lo[d] = lo;
    t.hi[d] = std::min(lo + 1, in - 1);
    t.frac[d] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
  check_shape(input.rank() == 3, "bilinear_resize", "input must be [C,H,W], got " + shape_str(input.shape()));
  check_shape(input.numel() > 0, "bilinear_resize", "zero-sized input");
  require(out_h >= 1 && out_w >= 1, ErrorKind::InvalidArgument, "bilinear_resize: output extent must be >= 1");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  auto ty = std::make_shared<AxisTaps>(axis_taps(h, out_h));
  auto tx = std::make_shared<AxisTaps>(axis_taps(w, out_w));
  std::vector<T> out(c * out_h * out_w);
  const T* x = input.data().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* plane = x + ch * h * w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const T fy = static_cast<T>(ty->frac[oy]);
      const T* r0 = plane + ty->lo[oy] * w;
      const T* r1 = plane + ty->hi[oy] * w;
      T* dst = out.data() + (ch * out_h + oy) * out_w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T fx = static_cast<T>(tx->frac[ox]);
        const std::size_t x0 = tx->lo[ox], x1 = tx->hi[ox];
        const T top = (T(1) - fx) * r0[x0] + fx * r0[x1];
        const T bottom = (T(1) - fx) * r1[x0] + fx * r1[x1];
        dst[ox] = (T(1) - fy) * top + fy * bottom;
      }
    }
  }
  ImplPtr<T> ix = input.impl();
  return make_result<T>("bilinear_resize", {c, out_h, out_w}, std::move(out), {input},
                        [ix, ty, tx, c, h, w, out_h, out_w](const TensorImpl<T>& o) {
                          T* gx = grad_target(ix);
                          if (!gx) return;
                          for (std::size_t ch = 0; ch < c; ++ch) {
                            T* plane = gx + ch * h * w;
                            for (std::size_t oy = 0; oy < out_h; ++oy) {
                              const T fy = static_cast<T>(ty->frac[oy]);
                              T* r0 = plane + ty->lo[oy] * w;
                              T* r1 = plane + ty->hi[oy] * w;
                              const T* g = o.grad.data() + (ch * out_h + oy) * out_w;
                              for (std::size_t ox = 0; ox < out_w; ++ox) {
                                const T fx = static_cast<T>(tx->frac[ox]);
                                const std::size_t x0 = tx->lo[ox], x1 = tx->hi[ox];
                                const T gt = (T(1) - fy) * g[ox];
                                const T gbm = fy * g[ox];
                                r0[x0] += (T(1) - fx) * gt;
                                r0[x1] += fx * gt;
                                r1[x0] += (T(1) - fx) * gbm;
                                r1[x1] += fx * gbm;
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("add", BinaryKind::Add, a, b);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("sub", BinaryKind::Sub, a, b);
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("hadamard", BinaryKind::Mul, a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  ImplPtr<T> ia = a.impl();
  return make_result<T>("scale", a.shape(), std::move(out), {a}, [ia, factor](const TensorImpl<T>& o) {
    if (T* g = grad_target(ia))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += factor * o.grad[i];
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += offset;
  ImplPtr<T> ia = a.impl();
  return make_result<T>("add_scalar", a.shape(), std::move(out), {a}, [ia](const TensorImpl<T>& o) {
    if (T* g = grad_target(ia))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> one_minus(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) - a[i];
  ImplPtr<T> ia = a.impl();
  return make_result<T>("one_minus", a.shape(), std::move(out), {a}, [ia](const TensorImpl<T>& o) {
    if (T* g = grad_target(ia))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  constexpr T kLow = std::numeric_limits<T>::min();
  const T kHigh = std::nextafter(T(1), T(0));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(logistic(a[i]), kLow, kHigh);
  ImplPtr<T> ia = a.impl();
  return make_result<T>("sigmoid", a.shape(), std::move(out), {a}, [ia](const TensorImpl<T>& o) {
    if (T* g = grad_target(ia))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * o.data[i] * (T(1) - o.data[i]);
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * logistic(a[i]);
  ImplPtr<T> ia = a.impl();
  return make_result<T>("silu", a.shape(), std::move(out), {a}, [ia](const TensorImpl<T>& o) {
    T* g = grad_target(ia);
    if (!g) return;
    const T* x = ia->data.data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T s = logistic(x[i]);
      g[i] += o.grad[i] * (s + x[i] * s * (T(1) - s));
    }
  });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  require(lo <= hi, ErrorKind::InvalidArgument, "clamp: lo > hi");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a[i], lo, hi);
  ImplPtr<T> ia = a.impl();
  return make_result<T>("clamp", a.shape(), std::move(out), {a}, [ia, lo, hi](const TensorImpl<T>& o) {
    T* g = grad_target(ia);
    if (!g) return;
    const T* x = ia->data.data();
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      if (x[i] >= lo && x[i] <= hi) g[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> reduce(ReduceKind kind, const Tensor<T>& input, const std::vector<std::size_t>& axes, bool keepdims) {
  require(!axes.empty(), ErrorKind::InvalidArgument, "reduce: empty axis list");
  const std::size_t rank = input.rank();
  std::vector<bool> reduced(rank, false);
  for (auto ax : axes) {
    require(ax < rank, ErrorKind::InvalidArgument, "reduce: axis out of range");
    require(!reduced[ax], ErrorKind::InvalidArgument, "reduce: duplicate axis");
    reduced[ax] = true;
  }
  Shape kept(rank);
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    kept[d] = reduced[d] ? 1 : input.dim(d);
    if (reduced[d]) count *= input.dim(d);
    if (!reduced[d] || keepdims) out_shape.push_back(kept[d]);
  }
  require(count > 0, ErrorKind::InvalidArgument, "reduce: reduction over an empty axis");
  if (out_shape.empty()) out_shape.push_back(1);

  // Row-major strides of the kept layout; reduced axes contribute stride 0.
  std::vector<std::size_t> ostride(rank, 0);
  {
    std::size_t s = 1;
    for (std::size_t d = rank; d-- > 0;) {
      ostride[d] = reduced[d] ? 0 : s;
      s *= kept[d];
    }
  }
  auto target = std::make_shared<std::vector<std::size_t>>(input.numel());
  {
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t i = 0; i < input.numel(); ++i) {
      std::size_t o = 0;
      for (std::size_t d = 0; d < rank; ++d) o += idx[d] * ostride[d];
      (*target)[i] = o;
      for (std::size_t d = rank; d-- > 0;) {
        if (++idx[d] < input.dim(d)) break;
        idx[d] = 0;
      }
    }
  }

  const std::size_t n_out = shape_numel(out_shape);
  std::vector<T> out(n_out, kind == ReduceKind::Max ? -std::numeric_limits<T>::infinity() : T(0));
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (kind == ReduceKind::Max) argmax->assign(n_out, 0);
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const std::size_t o = (*target)[i];
    if (kind == ReduceKind::Max) {
      if (input[i] > out[o]) {
        out[o] = input[i];
        (*argmax)[o] = i;
      }
    } else {
      out[o] += input[i];
    }
  }
  if (kind == ReduceKind::Mean)
    for (auto& v : out) v /= static_cast<T>(count);

  const char* name = kind == ReduceKind::Sum ? "reduce_sum" : kind == ReduceKind::Mean ? "reduce_mean" : "reduce_max";
  ImplPtr<T> ix = input.impl();
  return make_result<T>(name, out_shape, std::move(out), {input}, [ix, kind, target, argmax, count](const TensorImpl<T>& o) {
    T* g = grad_target(ix);
    if (!g) return;
    if (kind == ReduceKind::Max) {
      for (std::size_t k = 0; k < o.grad.size(); ++k) g[(*argmax)[k]] += o.grad[k];
      return;
    }
    const T factor = kind == ReduceKind::Mean ? T(1) / static_cast<T>(count) : T(1);
    for (std::size_t i = 0; i < target->size(); ++i) g[i] += factor * o.grad[(*target)[i]];
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& input, std::size_t axis) {
  require(axis < input.rank(), ErrorKind::InvalidArgument, "softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= input.dim(d);
  for (std::size_t d = axis + 1; d < input.rank(); ++d) inner *= input.dim(d);
  const std::size_t n = input.dim(axis);
  std::vector<T> out(input.numel());
  const T* x = input.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      T mx = x[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, x[base + k * inner]);
      T sum = T(0);
      for (std::size_t k = 0; k < n; ++k) {
        const T e = std::exp(x[base + k * inner] - mx);
        out[base + k * inner] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= sum;
    }
  }
  ImplPtr<T> ix = input.impl();
  return make_result<T>("softmax", input.shape(), std::move(out), {input}, [ix, outer, inner, n](const TensorImpl<T>& o) {
    T* g = grad_target(ix);
    if (!g) return;
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = a * n * inner + i;
        T dot = T(0);
        for (std::size_t k = 0; k < n; ++k) dot += o.grad[base + k * inner] * o.data[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t j = base + k * inner;
          g[j] += o.data[j] * (o.grad[j] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul",
              "cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  gemm::nn(m, n, k, a.data().data(), b.data().data(), out.data(), false);
  ImplPtr<T> ia = a.impl();
  ImplPtr<T> ib = b.impl();
  return make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [ia, ib, m, k, n](const TensorImpl<T>& o) {
    if (T* ga = grad_target(ia)) {
      std::vector<T> bt(n * k);
      gemm::transpose(k, n, ib->data.data(), bt.data());
      gemm::nn(m, k, n, o.grad.data(), bt.data(), ga, true);
    }
    if (T* gb = grad_target(ib)) gemm::tn(k, n, m, ia->data.data(), o.grad.data(), gb, true);
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  check_shape(a.rank() == 2, "transpose", "expects a matrix, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  gemm::transpose(r, c, a.data().data(), out.data());
  ImplPtr<T> ia = a.impl();
  return make_result<T>("transpose", {c, r}, std::move(out), {a}, [ia, r, c](const TensorImpl<T>& o) {
    T* g = grad_target(ia);
    if (!g) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  check_shape(shape_numel(shape) == a.numel(), "reshape",
              "cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  ImplPtr<T> ia = a.impl();
  return make_result<T>("reshape", std::move(shape), std::move(out), {a}, [ia](const TensorImpl<T>& o) {
    if (T* g = grad_target(ia))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), ErrorKind::InvalidArgument, "concat: no inputs");
  Shape shape = parts.front().shape();
  check_shape(!shape.empty(), "concat", "inputs must have rank >= 1");
  shape[0] = 0;
  for (const auto& p : parts) {
    check_shape(p.rank() == shape.size() && std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1),
                "concat", "trailing extents differ: " + shape_str(p.shape()));
    shape[0] += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(shape_numel(shape));
  std::vector<ImplPtr<T>> impls;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    impls.push_back(p.impl());
  }
  return make_result<T>("concat", std::move(shape), std::move(out), parts, [impls](const TensorImpl<T>& o) {
    std::size_t offset = 0;
    for (const auto& impl : impls) {
      if (T* g = grad_target(impl))
        for (std::size_t i = 0; i < impl->data.size(); ++i) g[i] += o.grad[offset + i];
      offset += impl->data.size();
    }
  });
}

#define BOXPROMPT_INSTANTIATE_OPS(T)                                                               \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);       \
  template Tensor<T> bilinear_resize(const Tensor<T>&, std::size_t, std::size_t);                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> hadamard(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                                   \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                              \
  template Tensor<T> one_minus(const Tensor<T>&);                                                  \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                    \
  template Tensor<T> silu(const Tensor<T>&);                                                       \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                                \
  template Tensor<T> reduce(ReduceKind, const Tensor<T>&, const std::vector<std::size_t>&, bool); \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> transpose(const Tensor<T>&);                                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
  template Tensor<T> concat(const std::vector<Tensor<T>>&);

BOXPROMPT_INSTANTIATE_OPS(float)
BOXPROMPT_INSTANTIATE_OPS(double)

#undef BOXPROMPT_INSTANTIATE_OPS

}  // namespace boxprompt::num
