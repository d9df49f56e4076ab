#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "numerics/tensor.hpp"
#include "student/config.hpp"

namespace boxprompt::student {

// K prototype vectors of dimension C aggregated by exponential moving average.
template <typename T>
struct MemoryBank {
  int slots = 0;
  int dim = 0;
  std::vector<T> prototypes;         // slots x dim, row-major
  std::vector<std::uint64_t> usage;  // updates received per slot
  bool frozen = false;

  std::span<const T> prototype(int k) const { return {prototypes.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)}; }
  // Constant [K, C] view for recall; never requires grad.
  num::Tensor<T> as_tensor() const;
  bool operator==(const MemoryBank&) const = default;
};

// Unit-variance seeded Gaussian scaled by 1/sqrt(C).
template <typename T>
MemoryBank<T> init_memory(const StudentConfig& config, std::uint64_t seed);

// Moves the slot most similar to `query` (dot product, lowest index on ties)
// toward it: m <- (1 - rate) m + rate q. Returns the slot index. Throws a
// State error on a frozen bank.
template <typename T>
int memory_update(MemoryBank<T>& bank, std::span<const T> query, double rate);

}  // namespace boxprompt::student
