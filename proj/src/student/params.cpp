#include "student/params.hpp"

#include <cmath>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace boxprompt::student {

std::vector<ParamSpec> param_specs(const StudentConfig& config) {
  const auto c = [&](int i) { return static_cast<std::size_t>(config.channels[i]); };
  const auto C = static_cast<std::size_t>(config.aligned_channels);
  std::vector<ParamSpec> specs;
  auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t k, double gain,
                  double bias = 0.0) {
    const double fan_in = static_cast<double>(cin * k * k);
    specs.push_back({name + ".weight", {cout, cin, k, k}, std::sqrt(gain / fan_in), 0.0});
    specs.push_back({name + ".bias", {cout}, 0.0, bias});
  };
  conv("backbone.stage1a", c(0), 3, 3, 2.0);
  conv("backbone.stage1b", c(0), c(0), 3, 2.0);
  conv("backbone.stage2", c(1), c(0), 3, 2.0);
  conv("backbone.stage3", c(2), c(1), 3, 2.0);
  conv("backbone.stage4", c(3), c(2), 3, 2.0);
  for (int i = 0; i < 4; ++i) conv("align." + std::to_string(i + 1), C, c(i), 1, 1.0);
  if (!config.ablation.no_gating)
    for (int i = 0; i < 4; ++i) conv("gate." + std::to_string(i + 1), 1, C, 1, 1.0);
  conv("fusion", C, 4 * C, 3, 1.0);
  conv("attention.key", 1, C, 1, 1.0);
  specs.push_back({"attention.proj.weight", {C, C}, std::sqrt(1.0 / static_cast<double>(C)), 0.0});
  conv("head.conv", C, C, 3, 2.0);
  // Output bias starts at the log-odds of a ~15% foreground prior.
  conv("head.out", 1, C, 1, 1.0, -1.7);
  return specs;
}

template <typename T>
const num::Tensor<T>& ModelParams<T>::at(const std::string& name) const {
  const auto it = tensors.find(name);
  require(it != tensors.end(), ErrorKind::State, "missing parameter " + name);
  return it->second;
}

template <typename T>
std::size_t ModelParams<T>::count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.config = config;
  for (const auto& [name, t] : tensors) {
    std::vector<U> values(t.data().begin(), t.data().end());
    auto copy = num::Tensor<U>(t.shape(), std::move(values));
    if (t.requires_grad()) copy.set_requires_grad(true);
    out.tensors.emplace(name, std::move(copy));
  }
  return out;
}

template <typename T>
ModelParams<T> init_params(const StudentConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(mix_seed(seed, 0x9a7a));
  ModelParams<T> p;
  p.config = config;
  for (const auto& spec : param_specs(config)) {
    std::vector<T> values(num::shape_numel(spec.shape));
    for (auto& v : values) v = static_cast<T>(spec.init_std > 0 ? spec.init_std * rng.normal() : spec.init_bias);
    p.tensors.emplace(spec.name, num::Tensor<T>::parameter(spec.shape, std::move(values)));
  }
  return p;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;
template ModelParams<float> init_params<float>(const StudentConfig&, std::uint64_t);
template ModelParams<double> init_params<double>(const StudentConfig&, std::uint64_t);

}  // namespace boxprompt::student
