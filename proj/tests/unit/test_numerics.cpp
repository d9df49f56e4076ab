#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "numerics/gradcheck.hpp"
#include "numerics/ops.hpp"

using namespace boxprompt;
using namespace boxprompt::num;

namespace {

template <typename T>
std::vector<T> random_values(Rng& rng, std::size_t n, double lo = -1, double hi = 1) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return v;
}

template <typename T>
Tensor<T> random_tensor(Rng& rng, Shape shape, bool param = false) {
  auto v = random_values<T>(rng, shape_numel(shape));
  return param ? Tensor<T>::parameter(shape, v) : Tensor<T>(shape, v);
}

// Direct four-loop cross-correlation.
template <typename T>
std::vector<T> naive_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  std::vector<T> out(static_cast<std::size_t>(cout) * ho * wo);
  for (int o = 0; o < cout; ++o)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) {
        long double acc = b[o];
        for (int c = 0; c < cin; ++c)
          for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
              const int sy = y * stride - pad + i, sx = xx * stride - pad + j;
              if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
              acc += static_cast<long double>(x[(c * h + sy) * wd + sx]) * w[((o * cin + c) * kh + i) * kw + j];
            }
        out[(o * ho + y) * wo + xx] = static_cast<T>(acc);
      }
  return out;
}

double bilinear_oracle(const std::vector<double>& in, int h, int w, int oh, int ow, int y, int x) {
  auto coord = [](int dst, int n_in, int n_out) {
    double s = (dst + 0.5) * static_cast<double>(n_in) / n_out - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(n_in - 1));
  };
  const double sy = coord(y, h, oh), sx = coord(x, w, ow);
  const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - y0, fx = sx - x0;
  auto at = [&](int r, int c) { return in[r * w + c]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

}  // namespace

TEST_CASE("conv2d box filter counts neighbours") {
  Tensor<float> x = Tensor<float>::full({1, 3, 3}, 1.0f);
  Tensor<float> w = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  Tensor<float> b({1});
  auto y = conv2d(x, w, b, 1, 1);
  CHECK(y.shape() == Shape{1, 3, 3});
  CHECK(y[4] == 9.0f);
  CHECK(y[0] == 4.0f);
  CHECK(y[2] == 4.0f);
  CHECK(y[6] == 4.0f);
  CHECK(y[8] == 4.0f);
  CHECK(y[1] == 6.0f);
}

TEST_CASE("conv2d with a unit 1x1 kernel is the identity") {
  Rng rng(3);
  auto x = random_tensor<float>(rng, {1, 4, 5});
  auto y = conv2d(x, Tensor<float>::full({1, 1, 1, 1}, 1.0f), Tensor<float>({1}), 1, 0);
  CHECK(std::memcmp(x.data().data(), y.data().data(), x.numel() * sizeof(float)) == 0);
}

TEST_CASE("conv2d matches the naive loop oracle") {
  Rng rng(11);
  SUBCASE("2x5x5 input, 3x2x3x3 kernel") {
    auto x = random_tensor<float>(rng, {2, 5, 5});
    auto w = random_tensor<float>(rng, {3, 2, 3, 3});
    auto b = random_tensor<float>(rng, {3});
    const auto ref = naive_conv(x, w, b, 1, 1);
    const auto y = conv2d(x, w, b, 1, 1);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y[i] - ref[i]) <= 1e-6);
  }
  SUBCASE("all shapes up to 4x8x8, both precisions") {
    for (int cin = 1; cin <= 4; ++cin)
      for (int hw = 1; hw <= 8; ++hw)
        for (int k : {1, 3})
          for (int stride : {1, 2})
            for (int pad : {0, 1}) {
              if (hw + 2 * pad < k) continue;
              const std::size_t cout = 1 + rng.uniform_int(0, 3);
              auto xf = random_tensor<float>(rng, {static_cast<std::size_t>(cin), static_cast<std::size_t>(hw),
                                                   static_cast<std::size_t>(hw)});
              auto wf = random_tensor<float>(rng, {cout, static_cast<std::size_t>(cin), static_cast<std::size_t>(k),
                                                   static_cast<std::size_t>(k)});
              auto bf = random_tensor<float>(rng, {cout});
              const auto ref = naive_conv(xf, wf, bf, stride, pad);
              const auto y = conv2d(xf, wf, bf, stride, pad);
              REQUIRE(y.numel() == ref.size());
              // 32-bit sums of up to 36 products: 1e-6 relative to the output scale.
              for (std::size_t i = 0; i < ref.size(); ++i)
                CHECK(std::abs(y[i] - ref[i]) <= 1e-6 * std::max(1.0f, std::abs(ref[i])));

              auto xd = random_tensor<double>(rng, xf.shape());
              auto wd = random_tensor<double>(rng, wf.shape());
              auto bd = random_tensor<double>(rng, bf.shape());
              const auto refd = naive_conv(xd, wd, bd, stride, pad);
              const auto yd = conv2d(xd, wd, bd, stride, pad);
              for (std::size_t i = 0; i < refd.size(); ++i) CHECK(std::abs(yd[i] - refd[i]) <= 1e-12);
            }
  }
}

TEST_CASE("conv2d rejects inconsistent shapes") {
  Tensor<float> x({2, 4, 4});
  CHECK_THROWS_AS(conv2d(x, Tensor<float>({1, 3, 3, 3}), Tensor<float>({1}), 1, 1), Error);
  CHECK_THROWS_AS(conv2d(x, Tensor<float>({1, 2, 2, 2}), Tensor<float>({1}), 1, 1), Error);
  CHECK_THROWS_AS(conv2d(x, Tensor<float>({1, 2, 3, 3}), Tensor<float>({2}), 1, 1), Error);
  CHECK_THROWS_AS(conv2d(x, Tensor<float>({1, 2, 3, 3}), Tensor<float>({1}), 0, 1), Error);
}

TEST_CASE("bilinear resize") {
  SUBCASE("same size is the identity") {
    Rng rng(5);
    auto x = random_tensor<float>(rng, {2, 3, 4});
    auto y = bilinear_resize(x, 3, 4);
    CHECK(std::memcmp(x.data().data(), y.data().data(), x.numel() * sizeof(float)) == 0);
  }
  SUBCASE("constants stay constant") {
    auto y = bilinear_resize(Tensor<float>::full({1, 3, 5}, 0.25f), 7, 2);
    for (float v : y.data()) CHECK(v == 0.25f);
  }
  SUBCASE("2x2 to 4x4 matches the coordinate formula") {
    const std::vector<double> in{1, 2, 3, 4};
    auto y = bilinear_resize(Tensor<double>({1, 2, 2}, in), 4, 4);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) CHECK(y[r * 4 + c] == doctest::Approx(bilinear_oracle(in, 2, 2, 4, 4, r, c)).epsilon(1e-15));
    // Corners clamp, the first interior sample sits a quarter of the way in.
    CHECK(y[0] == 1.0);
    CHECK(y[1] == doctest::Approx(1.25));
    CHECK(y[15] == 4.0);
  }
  SUBCASE("random downsampling matches the formula") {
    Rng rng(8);
    std::vector<double> in = random_values<double>(rng, 7 * 9);
    auto y = bilinear_resize(Tensor<double>({1, 7, 9}, in), 3, 4);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) CHECK(y[r * 4 + c] == doctest::Approx(bilinear_oracle(in, 7, 9, 3, 4, r, c)).epsilon(1e-14));
  }
  CHECK_THROWS_AS(bilinear_resize(Tensor<float>({1, 2, 2}), 0, 2), Error);
}

TEST_CASE("element-wise ops") {
  Rng rng(13);
  auto x = random_tensor<float>(rng, {3, 2, 2});
  auto ones = Tensor<float>::full({3, 2, 2}, 1.0f);
  auto h = hadamard(x, ones);
  CHECK(std::memcmp(x.data().data(), h.data().data(), x.numel() * sizeof(float)) == 0);
  CHECK(sigmoid(Tensor<float>({1}, {0.0f})).item() == 0.5f);

  SUBCASE("gate broadcast multiplies every channel by the same plane") {
    auto gate = random_tensor<float>(rng, {1, 2, 2});
    auto y = hadamard(gate, x);
    auto y2 = hadamard(x, gate);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 4; ++p) {
        CHECK(y[c * 4 + p] == x[c * 4 + p] * gate[p]);
        CHECK(y2[c * 4 + p] == y[c * 4 + p]);
      }
    CHECK_THROWS_AS(hadamard(x, Tensor<float>({2, 2, 2})), Error);
  }
  SUBCASE("sigmoid stays strictly inside (0,1) at 32 bit") {
    auto s = sigmoid(Tensor<float>({4}, {-200.0f, -90.0f, 40.0f, 200.0f}));
    for (float v : s.data()) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
    }
  }
  SUBCASE("clamp bounds are inclusive") {
    auto c = clamp(Tensor<float>({3}, {-2.0f, 0.5f, 2.0f}), -1.0f, 1.0f);
    CHECK(c[0] == -1.0f);
    CHECK(c[1] == 0.5f);
    CHECK(c[2] == 1.0f);
  }
}

TEST_CASE("non-finite results are reported with the op name") {
  Tensor<float> x({1}, {std::numeric_limits<float>::max()});
  try {
    (void)scale(x, 10.0f);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
    CHECK(std::string(e.what()).find("scale") != std::string::npos);
  }
}

TEST_CASE("reductions") {
  SUBCASE("mean of equal stacked tensors is the tensor") {
    Rng rng(2);
    auto x = random_values<double>(rng, 6);
    std::vector<double> stacked;
    for (int i = 0; i < 4; ++i) stacked.insert(stacked.end(), x.begin(), x.end());
    auto m = reduce(ReduceKind::Mean, Tensor<double>({4, 2, 3}, stacked), {0});
    CHECK(m.shape() == Shape{2, 3});
    for (std::size_t i = 0; i < 6; ++i) CHECK(m[i] == doctest::Approx(x[i]).epsilon(1e-15));
  }
  SUBCASE("sum of ones") {
    CHECK(reduce(ReduceKind::Sum, Tensor<float>::full({2, 3}, 1.0f), {0, 1}).item() == 6.0f);
  }
  SUBCASE("keepdims keeps singleton extents") {
    auto r = reduce(ReduceKind::Sum, Tensor<float>::full({2, 3, 4}, 1.0f), {1, 2}, true);
    CHECK(r.shape() == Shape{2, 1, 1});
    CHECK(r[0] == 12.0f);
  }
  SUBCASE("max over a one-hot plane") {
    for (std::size_t hot = 0; hot < 12; ++hot) {
      std::vector<float> v(2 * 12, 0.0f);
      v[hot] = 1.0f;
      v[12 + (hot + 5) % 12] = 1.0f;
      auto p = Tensor<float>::parameter({2, 3, 4}, v);
      auto m = reduce(ReduceKind::Max, p, {1, 2});
      CHECK(m[0] == 1.0f);
      CHECK(m[1] == 1.0f);
      backward(reduce(ReduceKind::Sum, m, {0}));
      for (std::size_t i = 0; i < 24; ++i) CHECK(p.grad()[i] == (i == hot || i == 12 + (hot + 5) % 12 ? 1.0f : 0.0f));
    }
  }
  SUBCASE("bad axes") {
    Tensor<float> x({2, 3});
    CHECK_THROWS_AS(reduce(ReduceKind::Sum, x, {}), Error);
    CHECK_THROWS_AS(reduce(ReduceKind::Sum, x, {2}), Error);
    CHECK_THROWS_AS(reduce(ReduceKind::Sum, x, {1, 1}), Error);
    CHECK_THROWS_AS(reduce(ReduceKind::Sum, Tensor<float>({2, 0}), {1}), Error);
  }
  SUBCASE("bitwise deterministic") {
    Rng rng(4);
    auto x = random_tensor<float>(rng, {5, 33, 17});
    auto a = reduce(ReduceKind::Mean, x, {1, 2});
    auto b = reduce(ReduceKind::Mean, x, {1, 2});
    CHECK(std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0);
  }
}

TEST_CASE("softmax") {
  auto u = softmax(Tensor<double>({4}, {3, 3, 3, 3}), 0);
  for (double v : u.data()) CHECK(v == 0.25);
  auto big = softmax(Tensor<double>({2}, {1000, 0}), 0);
  CHECK(std::abs(big[0] - 1.0) <= 1e-9);
  CHECK(std::abs(big[1]) <= 1e-9);

  Rng rng(21);
  auto x = random_values<double>(rng, 5, -3, 3);
  auto s = softmax(Tensor<double>({5}, x), 0);
  double z = 0;
  for (double v : x) z += std::exp(v);
  for (int i = 0; i < 5; ++i) CHECK(std::abs(s[i] - std::exp(x[i]) / z) <= 1e-12);

  auto m = softmax(random_tensor<float>(rng, {3, 7}), 1);
  for (int r = 0; r < 3; ++r) {
    double sum = 0;
    for (int c = 0; c < 7; ++c) {
      CHECK(m[r * 7 + c] > 0.0f);
      sum += m[r * 7 + c];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("linear form") {
    Rng rng(1);
    auto x = random_tensor<double>(rng, {2, 3});
    auto w = random_tensor<double>(rng, {2, 3}, true);
    backward(reduce(ReduceKind::Sum, hadamard(w, x), {0, 1}));
    for (std::size_t i = 0; i < 6; ++i) CHECK(w.grad()[i] == x[i]);
  }
  SUBCASE("sigmoid slope at zero") {
    auto w = Tensor<double>::parameter({1}, {0.0});
    backward(sigmoid(w));
    CHECK(w.grad()[0] == 0.25);
  }
  SUBCASE("repeated calls accumulate") {
    auto w = Tensor<double>::parameter({1}, {2.0});
    auto loss = hadamard(w, w);
    backward(loss);
    backward(loss);
    CHECK(w.grad()[0] == 8.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    auto w = Tensor<double>::parameter({2}, {1.0, 2.0});
    CHECK_THROWS_AS(backward(scale(w, 2.0)), Error);
  }
  SUBCASE("no graph under NoGradGuard") {
    auto w = Tensor<double>::parameter({1}, {1.0});
    NoGradGuard guard;
    CHECK_FALSE(scale(w, 2.0).requires_grad());
  }
}

TEST_CASE("gradcheck harness") {
  SUBCASE("quadratic bowl") {
    auto p = Tensor<double>::parameter({5}, {0.3, -1.2, 2.0, 0.0, 0.7});
    auto r = gradcheck([&] { return reduce(ReduceKind::Sum, hadamard(p, p), {0}); }, {{"p", p}});
    CHECK(r.pass);
    CHECK(r.max_rel_error() <= 1e-9);
  }
  SUBCASE("corrupted gradient is caught") {
    auto p = Tensor<double>::parameter({5}, {0.3, -1.2, 2.0, 0.5, 0.7});
    GradcheckOptions opt;
    opt.tamper_analytic = [](const std::string&, std::span<double> g) { g[2] *= 2.0; };
    auto r = gradcheck([&] { return reduce(ReduceKind::Sum, hadamard(p, p), {0}); }, {{"p", p}}, opt);
    CHECK_FALSE(r.pass);
  }
  SUBCASE("non-deterministic function is rejected") {
    auto p = Tensor<double>::parameter({1}, {1.0});
    double drift = 0.0;
    CHECK_THROWS_AS(gradcheck([&] { return add_scalar(p, drift += 1.0); }, {{"p", p}}), Error);
  }
}

// Each primitive is composed with a fixed random projection of its output,
// centred on the value at the base point. Centring keeps the loss near zero
// so round-off in the differences stays far below the analytic gradient.
TEST_CASE("per-primitive gradients match finite differences") {
  Rng rng(99);
  GradcheckOptions opt;
  opt.tol = 1e-6;
  using Fn = std::function<Tensor<double>()>;
  auto check_op = [&](const char* name, const Fn& op, const NamedTensors& params) {
    Tensor<double> centre;
    {
      NoGradGuard guard;
      centre = op().detach();
    }
    std::vector<double> r = random_values<double>(rng, centre.numel());
    const Tensor<double> weights(centre.shape(), r);
    std::vector<std::size_t> axes(centre.rank());
    for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
    const auto report = gradcheck([&] { return reduce(ReduceKind::Sum, hadamard(sub(op(), centre), weights), axes); },
                                  params, opt);
    const std::string op_name = name;
    CAPTURE(op_name);
    CHECK(report.pass);
    CHECK(report.max_rel_error() <= 1e-6);
  };
  // Keeps values at least `gap` away from the clamp kinks at +-0.5.
  auto away_from_kinks = [](std::vector<double> v, double gap) {
    for (auto& x : v)
      for (double k : {-0.5, 0.5})
        if (std::abs(x - k) < gap) x = k + (x < k ? -gap : gap);
    return v;
  };

  for (int trial = 0; trial < 100; ++trial) {
    CAPTURE(trial);
    auto a = random_tensor<double>(rng, {3, 4, 5}, true);
    auto b = random_tensor<double>(rng, {3, 4, 5}, true);
    auto g = random_tensor<double>(rng, {1, 4, 5}, true);
    auto w = random_tensor<double>(rng, {2, 3, 3, 3}, true);
    auto bias = random_tensor<double>(rng, {2}, true);
    auto m1 = random_tensor<double>(rng, {4, 3}, true);
    auto m2 = random_tensor<double>(rng, {3, 5}, true);
    auto ak = Tensor<double>::parameter({3, 4, 5}, away_from_kinks(random_values<double>(rng, 60), 1e-3));
    // Distinct values per channel with gaps well above eps for the max.
    std::vector<double> ranked(60);
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> vals(20);
      for (std::size_t i = 0; i < 20; ++i) vals[i] = 0.05 * static_cast<double>(i) + rng.uniform(0, 0.01);
      for (std::size_t i = 19; i > 0; --i) std::swap(vals[i], vals[rng.uniform_int(0, static_cast<std::int64_t>(i))]);
      std::copy(vals.begin(), vals.end(), ranked.begin() + static_cast<std::ptrdiff_t>(c * 20));
    }
    auto am = Tensor<double>::parameter({3, 4, 5}, ranked);

    check_op("add", [&] { return add(a, b); }, {{"a", a}, {"b", b}});
    check_op("add_broadcast", [&] { return add(g, b); }, {{"g", g}, {"b", b}});
    check_op("sub", [&] { return sub(a, g); }, {{"a", a}, {"g", g}});
    check_op("hadamard", [&] { return hadamard(g, b); }, {{"g", g}, {"b", b}});
    check_op("hadamard_same", [&] { return hadamard(a, b); }, {{"a", a}, {"b", b}});
    check_op("scale", [&] { return scale(a, 1.7); }, {{"a", a}});
    check_op("add_scalar", [&] { return add_scalar(a, 0.3); }, {{"a", a}});
    check_op("one_minus", [&] { return one_minus(a); }, {{"a", a}});
    check_op("sigmoid", [&] { return sigmoid(a); }, {{"a", a}});
    check_op("silu", [&] { return silu(a); }, {{"a", a}});
    check_op("clamp", [&] { return clamp(ak, -0.5, 0.5); }, {{"ak", ak}});
    check_op("conv2d", [&] { return conv2d(a, w, bias, 2, 1); }, {{"a", a}, {"w", w}, {"bias", bias}});
    check_op("conv2d_s1", [&] { return conv2d(a, w, bias, 1, 1); }, {{"a", a}, {"w", w}});
    check_op("resize_up", [&] { return bilinear_resize(a, 7, 8); }, {{"a", a}});
    check_op("resize_down", [&] { return bilinear_resize(a, 3, 2); }, {{"a", a}});
    check_op("mean", [&] { return reduce(ReduceKind::Mean, a, {0}); }, {{"a", a}});
    check_op("sum", [&] { return reduce(ReduceKind::Sum, a, {1, 2}, true); }, {{"a", a}});
    check_op("max", [&] { return reduce(ReduceKind::Max, am, {1, 2}); }, {{"am", am}});
    check_op("softmax", [&] { return softmax(a, 2); }, {{"a", a}});
    check_op("softmax_axis0", [&] { return softmax(a, 0); }, {{"a", a}});
    check_op("matmul", [&] { return matmul(m1, m2); }, {{"m1", m1}, {"m2", m2}});
    check_op("transpose", [&] { return transpose(m1); }, {{"m1", m1}});
    check_op("reshape", [&] { return reshape(a, {12, 5}); }, {{"a", a}});
    check_op("concat", [&] { return concat<double>({a, b}); }, {{"a", a}, {"b", b}});
  }
}
