#pragma once

#include <array>
#include <string>

#include "json.hpp"

namespace boxprompt::student {

struct AblationFlags {
  bool no_memory = false;      // A_final = A_base * G_avg
  bool no_gate_prior = false;  // G_avg replaced by ones inside the attention fusion
  bool no_gating = false;      // plain concatenation of the aligned features
  bool operator==(const AblationFlags&) const = default;
};

struct StudentConfig {
  int input_h = 64;
  int input_w = 64;
  std::array<int, 4> channels{16, 32, 64, 128};  // backbone stages, strides 4/8/16/32
  int aligned_channels = 32;
  int memory_slots = 16;
  double memory_temperature = 0.1;
  double ema_rate = 0.01;
  double alpha = 0.7;
  AblationFlags ablation;

  int aligned_h() const { return input_h / 4; }
  int aligned_w() const { return input_w / 4; }
  // Spatial extent of backbone stage k (1-based): each stride-2 3x3 conv
  // with padding 1 maps n to ceil(n / 2).
  int stage_h(int k) const;
  int stage_w(int k) const;

  // Throws a Config error on any violated invariant.
  void validate() const;

  nlohmann::json to_json() const;
  // Rejects unknown keys; missing keys keep their defaults.
  static StudentConfig from_json(const nlohmann::json& j);
  bool operator==(const StudentConfig&) const = default;
};

}  // namespace boxprompt::student
