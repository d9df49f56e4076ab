#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "numerics/tensor.hpp"
#include "student/config.hpp"

namespace boxprompt::student {

struct ParamSpec {
  std::string name;
  num::Shape shape;
  double init_std = 0.0;
  double init_bias = 0.0;  // constant fill used when init_std == 0
};

// Layer plan of the student. Gate convolutions are absent under no_gating.
std::vector<ParamSpec> param_specs(const StudentConfig& config);

template <typename T>
struct ModelParams {
  StudentConfig config;
  std::map<std::string, num::Tensor<T>> tensors;  // sorted, unique names

  const num::Tensor<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors.count(name) > 0; }
  std::size_t count() const;  // total element count

  // Deep copy converted to another precision; leaves keep requires_grad.
  template <typename U>
  ModelParams<U> cast() const;
  ModelParams<T> clone() const { return cast<T>(); }
};

// Seeded Gaussian init (drawn in double, then rounded to T).
template <typename T>
ModelParams<T> init_params(const StudentConfig& config, std::uint64_t seed);

extern template struct ModelParams<float>;
extern template struct ModelParams<double>;

}  // namespace boxprompt::student
