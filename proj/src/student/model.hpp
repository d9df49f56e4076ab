#pragma once

#include <array>
#include <optional>
#include <vector>

#include "numerics/tensor.hpp"
#include "student/config.hpp"
#include "student/memory_bank.hpp"
#include "student/params.hpp"

namespace boxprompt::student {

template <typename T>
using FeatureSet = std::array<num::Tensor<T>, 4>;

// Four maps at strides 4/8/16/32 from a [3,H,W] image.
template <typename T>
FeatureSet<T> backbone_forward(const num::Tensor<T>& image, const ModelParams<T>& params);

// 1x1 projection to C channels, then bilinear resize to (H/4, W/4).
template <typename T>
FeatureSet<T> align_features(const FeatureSet<T>& features, const ModelParams<T>& params);

template <typename T>
struct GatedIntegration {
  num::Tensor<T> fused;     // [C,h,w]
  num::Tensor<T> gate_avg;  // [1,h,w]
  FeatureSet<T> gates;      // [1,h,w] each
  FeatureSet<T> mixed;      // G_i*F'_i + (1 - G_i) * sum_{j != i} G_j*F'_j
  FeatureSet<T> modulated;  // F'_i * mixed_i
};

// `injected_gates` replaces the learned gate maps (test hook).
template <typename T>
GatedIntegration<T> gated_integration(const FeatureSet<T>& aligned, const ModelParams<T>& params, bool no_gating,
                                      const FeatureSet<T>* injected_gates = nullptr);

// Global-context attention: softmax-pooled context vector c, then
// sigmoid(<F(:,p), W c> / sqrt(C)) at every position. Returns [1,h,w].
template <typename T>
num::Tensor<T> base_attention(const num::Tensor<T>& fused, const ModelParams<T>& params);

// Query = spatial mean of `fused`; slot weights softmax(<q, m_k> / tau);
// recalled prototype m = sum_k w_k m_k; map sigmoid(<F(:,p), m> / sqrt(C)).
template <typename T>
num::Tensor<T> memory_recall(const num::Tensor<T>& fused, const MemoryBank<T>& bank, double temperature);

// alpha * (A_base * G_avg) + (1 - alpha) * A_mem, with the ablations applied.
// `memory` may be undefined when flags.no_memory is set.
template <typename T>
num::Tensor<T> fuse_attention(const num::Tensor<T>& base, const num::Tensor<T>& gate_avg, const num::Tensor<T>& memory,
                              double alpha, const AblationFlags& flags);

template <typename T>
struct ForwardHooks {
  std::optional<FeatureSet<T>> gates;
  std::optional<num::Tensor<T>> final_attention;
};

template <typename T>
struct Prediction {
  num::Tensor<T> output;  // [H,W], values in (0,1)
  FeatureSet<T> features;
  FeatureSet<T> aligned;
  GatedIntegration<T> gated;
  num::Tensor<T> base_attention;
  num::Tensor<T> memory_attention;  // undefined under no_memory
  num::Tensor<T> final_attention;
  num::Tensor<T> attended;          // F_fused * (1 + A_final)
  std::vector<T> query;             // spatial mean of F_fused, for the memory update
};

template <typename T>
Prediction<T> predict(const num::Tensor<T>& image, const ModelParams<T>& params, const MemoryBank<T>& bank,
                      const ForwardHooks<T>& hooks = {});

}  // namespace boxprompt::student
