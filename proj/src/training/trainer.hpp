#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "numerics/tensor.hpp"
#include "student/memory_bank.hpp"
#include "student/params.hpp"

namespace boxprompt::training {

struct TrainOptions {
  int epochs = 20;
  int batch_size = 8;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool class_balanced = false;
  std::vector<int> checkpoint_epochs{10, 20};

  void validate() const;
  nlohmann::json to_json() const;
  // Rejects unknown keys; missing keys keep their defaults.
  static TrainOptions from_json(const nlohmann::json& j);
};

struct TrainState {
  student::ModelParams<float> params;
  student::MemoryBank<float> bank;
  std::map<std::string, std::vector<float>> first_moment;
  std::map<std::string, std::vector<float>> second_moment;
  std::uint64_t step = 0;
  int epoch = 0;
  std::uint64_t seed = 0;  // root of every random stream used by training
};

// Fresh parameters, memory bank and zeroed moments, all derived from `seed`.
TrainState init_state(const student::StudentConfig& config, std::uint64_t seed);

struct Example {
  num::Tensor<float> image;   // [3,H,W]
  num::Tensor<float> target;  // [H,W], binary
};

// One optimizer step on the mean loss of `batch`, then one memory update per
// sample from the features computed before the step (skipped under no_memory).
// Returns the mean loss.
double train_step(TrainState& state, const std::vector<const Example*>& batch, const TrainOptions& options);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double wall_seconds = 0.0;
};

// Runs epochs state.epoch+1 .. options.epochs over `examples`, shuffled per
// epoch from (state.seed, epoch). `on_epoch` fires after every epoch.
void fit(TrainState& state, const std::vector<Example>& examples, const TrainOptions& options,
         const std::function<void(const TrainState&, const EpochLog&)>& on_epoch = {});

}  // namespace boxprompt::training
