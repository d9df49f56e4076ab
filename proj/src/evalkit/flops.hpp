#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "student/config.hpp"
#include "student/params.hpp"

namespace boxprompt::eval {

template <typename T>
std::uint64_t count_params(const student::ModelParams<T>& params) {
  return params.count();
}
// Same count from the layer plan alone.
std::uint64_t count_params(const student::StudentConfig& config);

// Analytic operation counter. Conventions:
//   conv      2 * Cout * Cin * kH * kW * H' * W'   (bias adds not counted)
//   matmul    2 * m * n * k
//   eltwise   1 per output element per primitive (add, mul, sigmoid, silu, ...)
//   reduce    1 per input element
//   softmax   4 per element (max, subtract+exp, sum, divide)
//   resize    7 per output element, 0 when the size is unchanged
class FlopCounter {
 public:
  struct Term {
    std::string name;
    std::uint64_t flops;
  };

  void conv(const std::string& name, std::uint64_t cout, std::uint64_t cin, std::uint64_t k, std::uint64_t ho,
            std::uint64_t wo);
  void matmul(const std::string& name, std::uint64_t m, std::uint64_t n, std::uint64_t k);
  void eltwise(const std::string& name, std::uint64_t elements, std::uint64_t primitives = 1);
  void reduce(const std::string& name, std::uint64_t input_elements);
  void softmax(const std::string& name, std::uint64_t elements);
  void resize(const std::string& name, std::uint64_t channels, std::uint64_t in_h, std::uint64_t in_w,
              std::uint64_t out_h, std::uint64_t out_w);

  std::uint64_t total() const;
  const std::vector<Term>& terms() const { return terms_; }

 private:
  void add(const std::string& name, std::uint64_t flops) { terms_.push_back({name, flops}); }
  std::vector<Term> terms_;
};

// One student forward pass at the configured resolution.
FlopCounter flop_breakdown(const student::StudentConfig& config);
std::uint64_t count_flops(const student::StudentConfig& config);

}  // namespace boxprompt::eval
