#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "common/image.hpp"
#include "evalkit/metrics.hpp"
#include "numerics/gradcheck.hpp"
#include "pipeline/run_config.hpp"
#include "training/trainer.hpp"

namespace boxprompt::pipeline {

synth::DatasetManifest generate_data(const RunConfig& config);
// Loads and verifies the manifest named by config.dataset.
synth::DatasetManifest open_data(const RunConfig& config);

struct SupervisionSet {
  std::vector<Mask> masks;  // one per training record, in manifest order
  double mean_iou = 0.0;    // against the ground truth
};

// Pseudo-masks (or ground truth) for every training record. Teacher
// randomness derives from (run seed, record seed).
SupervisionSet supervision(const synth::DatasetManifest& manifest, const TeacherConfig& teacher, std::uint64_t seed);

// Writes pseudo_<image stem>.pgm per training record plus teach_summary.json.
SupervisionSet teach(const RunConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir);

num::Tensor<float> image_tensor(const Image& image);
std::vector<training::Example> build_examples(const synth::DatasetManifest& manifest, const SupervisionSet& masks);

// Trains one student. Writes checkpoint_e<N>.bin at the configured epochs,
// final.bin, train_log.csv and run_config.json into out_dir. When `resume`
// is given, training continues from that checkpoint.
training::TrainState train_run(const RunConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir,
                               const std::optional<std::filesystem::path>& resume = std::nullopt);

eval::MetricsReport evaluate_checkpoint(const RunConfig& config, const std::filesystem::path& checkpoint,
                                        const std::string& split);

struct AblationRow {
  std::string variant;
  std::vector<double> ind_f1;  // one per seed
  std::vector<double> ood_f1;
  double ind_median = 0.0;
  double ood_median = 0.0;
};

double median(std::vector<double> values);

// The four configurations: full, no_memory, no_gate_prior, no_gating.
std::vector<std::pair<std::string, student::AblationFlags>> ablation_variants();

// Trains and evaluates every variant for every seed (up to `threads` runs at
// once) and writes ablation.csv into out_dir.
std::vector<AblationRow> run_ablation(const RunConfig& config, const std::filesystem::path& out_dir, int threads);

// Full-model gradient check in double precision on a 16x16 input: BCE of
// the prediction against a fixed random mask, checked against every parameter.
num::GradReport gradcheck_model(const student::StudentConfig& base, std::uint64_t seed,
                                const num::GradcheckOptions& options);

// BOXPROMPT_THREADS when set to a positive integer, otherwise 1.
int thread_cap();

}  // namespace boxprompt::pipeline
