#include "student/memory_bank.hpp"

#include <cmath>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace boxprompt::student {

template <typename T>
num::Tensor<T> MemoryBank<T>::as_tensor() const {
  return num::Tensor<T>({static_cast<std::size_t>(slots), static_cast<std::size_t>(dim)}, prototypes);
}

template <typename T>
MemoryBank<T> init_memory(const StudentConfig& config, std::uint64_t seed) {
  MemoryBank<T> bank;
  bank.slots = config.memory_slots;
  bank.dim = config.aligned_channels;
  bank.prototypes.resize(static_cast<std::size_t>(bank.slots) * bank.dim);
  bank.usage.assign(static_cast<std::size_t>(bank.slots), 0);
  Rng rng(mix_seed(seed, 0x3e3));
  const double s = 1.0 / std::sqrt(static_cast<double>(bank.dim));
  for (auto& v : bank.prototypes) v = static_cast<T>(s * rng.normal());
  return bank;
}

template <typename T>
int memory_update(MemoryBank<T>& bank, std::span<const T> query, double rate) {
  require(!bank.frozen, ErrorKind::State, "memory_update: bank is frozen");
  require(rate > 0 && rate <= 1, ErrorKind::InvalidArgument, "memory_update: rate must be in (0, 1]");
  require(query.size() == static_cast<std::size_t>(bank.dim), ErrorKind::Shape, "memory_update: query dimension mismatch");
  int best = 0;
  T best_score = T(0);
  for (int k = 0; k < bank.slots; ++k) {
    const auto m = bank.prototype(k);
    T score = T(0);
    for (int c = 0; c < bank.dim; ++c) score += query[c] * m[c];
    if (k == 0 || score > best_score) {
      best = k;
      best_score = score;
    }
  }
  T* m = bank.prototypes.data() + static_cast<std::size_t>(best) * bank.dim;
  const T keep = static_cast<T>(1.0 - rate);
  const T take = static_cast<T>(rate);
  for (int c = 0; c < bank.dim; ++c) m[c] = keep * m[c] + take * query[c];
  ++bank.usage[static_cast<std::size_t>(best)];
  return best;
}

template struct MemoryBank<float>;
template struct MemoryBank<double>;
template MemoryBank<float> init_memory<float>(const StudentConfig&, std::uint64_t);
template MemoryBank<double> init_memory<double>(const StudentConfig&, std::uint64_t);
template int memory_update<float>(MemoryBank<float>&, std::span<const float>, double);
template int memory_update<double>(MemoryBank<double>&, std::span<const double>, double);

}  // namespace boxprompt::student
