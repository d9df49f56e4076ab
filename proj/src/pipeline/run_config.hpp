#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "evalkit/metrics.hpp"
#include "json.hpp"
#include "student/config.hpp"
#include "synthgen/dataset.hpp"
#include "training/trainer.hpp"

namespace boxprompt::pipeline {

// Supervision used for training: one of the two teachers, or the ground-truth
// masks themselves (the fully supervised control).
enum class Supervision { DegradedGt, Classical, GroundTruth };

std::string_view supervision_name(Supervision s);
Supervision parse_supervision(std::string_view name);

struct TeacherConfig {
  Supervision mode = Supervision::DegradedGt;
  double quality = 0.9;
};

struct RunConfig {
  synth::DatasetConfig dataset;
  student::StudentConfig student;
  TeacherConfig teacher;
  training::TrainOptions training;
  eval::EvalOptions eval;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path out_dir = "runs";

  // Every section is optional; unknown keys anywhere are a Config error.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;
};

}  // namespace boxprompt::pipeline
