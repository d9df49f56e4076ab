#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "common/image.hpp"
#include "evalkit/perturb.hpp"
#include "json.hpp"
#include "numerics/tensor.hpp"
#include "synthgen/dataset.hpp"
#include "training/trainer.hpp"

namespace boxprompt::eval {

struct Confusion {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Pixels with pred >= threshold count as positive.
Confusion confusion(std::span<const float> pred, const Mask& gt, double threshold = 0.5);
// 2TP / (2TP + FP + FN); 1 when prediction and truth are both empty, 0 when
// exactly one is.
double f1_from_confusion(const Confusion& c);
double f1_fixed(const num::Tensor<float>& pred, const Mask& gt, double threshold = 0.5);

struct SampleScore {
  std::string image_file;
  std::string family;
  double f1 = 0.0;
};

struct MetricsReport {
  std::string split;
  double mean_f1 = 0.0;  // per-image mean, or the pooled F1 when pooled is set
  bool pooled = false;
  double threshold = 0.5;
  std::vector<SampleScore> samples;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::string config_digest;
  std::string checkpoint_digest;
  std::string perturbation;  // "none" or "<kind>:<level>"

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

struct EvalOptions {
  double threshold = 0.5;
  bool pooled = false;  // F1 over all pixels of the split instead of the per-image mean
  std::optional<Perturbation> perturbation;
  std::uint64_t perturb_seed = 0;
};

// Runs the student with a frozen copy of the memory bank on every record of
// `split` and scores against the ground-truth masks. `state` is not modified.
MetricsReport evaluate(const training::TrainState& state, const synth::DatasetManifest& manifest,
                       const std::string& split, const EvalOptions& options = {},
                       const std::string& checkpoint_digest = "");

// Writes <stem>.json and <stem>.csv into `dir`.
void write_report(const MetricsReport& report, const std::filesystem::path& dir, const std::string& stem);

}  // namespace boxprompt::eval
