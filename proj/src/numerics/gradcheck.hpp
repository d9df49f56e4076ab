#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "numerics/tensor.hpp"

namespace boxprompt::num {

struct ParamGradError {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

struct GradReport {
  std::vector<ParamGradError> params;
  double tolerance = 0.0;
  bool pass = false;

  double max_rel_error() const;
  std::string to_json() const;
};

struct GradcheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // 0 checks every element; otherwise a seeded subset of each parameter.
  std::size_t max_elements_per_param = 0;
  std::uint64_t seed = 0;
  // Test hook: edits the analytic gradient before comparison.
  std::function<void(const std::string& name, std::span<double> grad)> tamper_analytic;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor<double>>>;

// Compares reverse-mode gradients of a scalar function against central
// differences (f(p+eps) - f(p-eps)) / (2 eps). Relative error uses the
// denominator max(|analytic|, |numeric|, 1e-8). `f` must rebuild its graph
// from the current parameter values on every call.
GradReport gradcheck(const std::function<Tensor<double>()>& f, const NamedTensors& params,
                     const GradcheckOptions& options = {});

}  // namespace boxprompt::num
