#include "numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "json.hpp"

#include "common/error.hpp"
#include "common/rng.hpp"

namespace boxprompt::num {

double GradReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& p : params) m = std::max(m, p.max_rel_error);
  return m;
}

std::string GradReport::to_json() const {
  nlohmann::json j;
  j["pass"] = pass;
  j["tolerance"] = tolerance;
  j["max_rel_error"] = max_rel_error();
  auto& arr = j["params"] = nlohmann::json::array();
  for (const auto& p : params) {
    arr.push_back({{"name", p.name},
                   {"max_rel_error", p.max_rel_error},
                   {"max_abs_error", p.max_abs_error},
                   {"checked", p.checked}});
  }
  return j.dump(2);
}

namespace {

std::vector<std::size_t> pick_elements(std::size_t n, std::size_t limit, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= n) return idx;
  Rng rng(seed);
  for (std::size_t i = 0; i < limit; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n - 1)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double evaluate(const std::function<Tensor<double>()>& f) {
  NoGradGuard guard;
  return f().item();
}

}  // namespace

GradReport gradcheck(const std::function<Tensor<double>()>& f, const NamedTensors& params,
                     const GradcheckOptions& options) {
  require(options.eps > 0.0, ErrorKind::InvalidArgument, "gradcheck: eps must be positive");

  const double first = evaluate(f);
  const double second = evaluate(f);
  require(std::memcmp(&first, &second, sizeof(double)) == 0, ErrorKind::State,
          "gradcheck: function is not deterministic (two evaluations differ)");

  for (const auto& [name, p] : params) {
    auto t = p;
    require(t.is_leaf() && t.requires_grad(), ErrorKind::InvalidArgument,
            "gradcheck: " + name + " is not a differentiable leaf");
    t.zero_grad();
  }
  backward(f());

  GradReport report;
  report.tolerance = options.tol;
  report.pass = true;
  std::uint64_t tag = 0;
  for (const auto& [name, p] : params) {
    Tensor<double> t = p;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    if (options.tamper_analytic) options.tamper_analytic(name, analytic);

    ParamGradError err;
    err.name = name;
    auto values = t.mutable_data();
    for (std::size_t i : pick_elements(t.numel(), options.max_elements_per_param, mix_seed(options.seed, tag++))) {
      const double saved = values[i];
      values[i] = saved + options.eps;
      const double up = evaluate(f);
      values[i] = saved - options.eps;
      const double down = evaluate(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      err.max_abs_error = std::max(err.max_abs_error, abs_err);
      err.max_rel_error = std::max(err.max_rel_error, abs_err / denom);
      ++err.checked;
    }
    if (err.max_rel_error > options.tol) report.pass = false;
    report.params.push_back(std::move(err));
  }
  return report;
}

}  // namespace boxprompt::num
