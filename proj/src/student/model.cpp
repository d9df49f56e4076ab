#include "student/model.hpp"

#include <cmath>
#include <string>

#include "common/error.hpp"
#include "numerics/ops.hpp"

namespace boxprompt::student {

using num::Tensor;

namespace {

// Pixels in [0,1] have a small spread; this lifts the stem's activations to
// roughly unit scale so the gated products downstream do not collapse.
constexpr double kInputGain = 4.0;

template <typename T>
Tensor<T> conv(const Tensor<T>& x, const ModelParams<T>& params, const std::string& name, int stride, int padding) {
  return num::conv2d(x, params.at(name + ".weight"), params.at(name + ".bias"), stride, padding);
}

// sigmoid(<F(:,p), v> / sqrt(C)) as a [1,h,w] map; v is [C,1].
template <typename T>
Tensor<T> similarity_map(const Tensor<T>& flat, const Tensor<T>& v, std::size_t h, std::size_t w) {
  const auto C = static_cast<T>(flat.dim(0));
  auto logits = num::scale(num::matmul(num::transpose(v), flat), T(1) / std::sqrt(C));
  return num::reshape(num::sigmoid(logits), {1, h, w});
}

template <typename T>
Tensor<T> flatten_spatial(const Tensor<T>& x) {
  return num::reshape(x, {x.dim(0), x.dim(1) * x.dim(2)});
}

}  // namespace

template <typename T>
FeatureSet<T> backbone_forward(const Tensor<T>& image, const ModelParams<T>& params) {
  const auto& cfg = params.config;
  require(image.rank() == 3 && image.dim(0) == 3, ErrorKind::Shape,
          "backbone: expected a [3,H,W] image, got " + num::shape_str(image.shape()));
  require(image.dim(1) == static_cast<std::size_t>(cfg.input_h) && image.dim(2) == static_cast<std::size_t>(cfg.input_w),
          ErrorKind::Shape,
          "backbone: image " + num::shape_str(image.shape()) + " does not match the configured input size");
  auto x = num::silu(conv(num::scale(image, static_cast<T>(kInputGain)), params, "backbone.stage1a", 2, 1));
  FeatureSet<T> f;
  f[0] = num::silu(conv(x, params, "backbone.stage1b", 2, 1));
  f[1] = num::silu(conv(f[0], params, "backbone.stage2", 2, 1));
  f[2] = num::silu(conv(f[1], params, "backbone.stage3", 2, 1));
  f[3] = num::silu(conv(f[2], params, "backbone.stage4", 2, 1));
  return f;
}

template <typename T>
FeatureSet<T> align_features(const FeatureSet<T>& features, const ModelParams<T>& params) {
  const auto h = static_cast<std::size_t>(params.config.aligned_h());
  const auto w = static_cast<std::size_t>(params.config.aligned_w());
  FeatureSet<T> out;
  for (int i = 0; i < 4; ++i) {
    auto p = conv(features[i], params, "align." + std::to_string(i + 1), 1, 0);
    out[i] = (p.dim(1) == h && p.dim(2) == w) ? p : num::bilinear_resize(p, h, w);
  }
  return out;
}

template <typename T>
GatedIntegration<T> gated_integration(const FeatureSet<T>& aligned, const ModelParams<T>& params, bool no_gating,
                                      const FeatureSet<T>* injected_gates) {
  GatedIntegration<T> g;
  const std::size_t h = aligned[0].dim(1), w = aligned[0].dim(2);
  if (no_gating) {
    g.fused = conv(num::concat<T>({aligned[0], aligned[1], aligned[2], aligned[3]}), params, "fusion", 1, 1);
    g.gate_avg = Tensor<T>::full({1, h, w}, T(1));
    for (auto& gate : g.gates) gate = g.gate_avg;
    return g;
  }
  for (int i = 0; i < 4; ++i) {
    if (injected_gates) {
      const auto& gi = (*injected_gates)[i];
      require(gi.shape() == num::Shape{1, h, w}, ErrorKind::Shape,
              "gated_integration: injected gate has shape " + num::shape_str(gi.shape()));
      g.gates[i] = gi;
    } else {
      g.gates[i] = num::sigmoid(conv(aligned[i], params, "gate." + std::to_string(i + 1), 1, 0));
    }
  }
  FeatureSet<T> weighted;
  for (int i = 0; i < 4; ++i) weighted[i] = num::hadamard(aligned[i], g.gates[i]);
  for (int i = 0; i < 4; ++i) {
    // Sum over the other levels, accumulated directly (not total minus own term).
    Tensor<T> others;
    for (int j = 0; j < 4; ++j) {
      if (j == i) continue;
      others = others.defined() ? num::add(others, weighted[j]) : weighted[j];
    }
    g.mixed[i] = num::add(weighted[i], num::hadamard(others, num::one_minus(g.gates[i])));
    g.modulated[i] = num::hadamard(aligned[i], g.mixed[i]);
  }
  g.fused = conv(num::concat<T>({g.modulated[0], g.modulated[1], g.modulated[2], g.modulated[3]}), params, "fusion", 1, 1);
  auto sum = num::add(num::add(g.gates[0], g.gates[1]), num::add(g.gates[2], g.gates[3]));
  g.gate_avg = num::scale(sum, T(0.25));
  return g;
}

template <typename T>
Tensor<T> base_attention(const Tensor<T>& fused, const ModelParams<T>& params) {
  const std::size_t h = fused.dim(1), w = fused.dim(2);
  const auto flat = flatten_spatial(fused);
  auto key = flatten_spatial(conv(fused, params, "attention.key", 1, 0));  // [1, hw]
  auto weights = num::softmax(key, 1);
  auto context = num::matmul(flat, num::transpose(weights));  // [C, 1]
  auto projected = num::matmul(params.at("attention.proj.weight"), context);
  return similarity_map(flat, projected, h, w);
}

template <typename T>
Tensor<T> memory_recall(const Tensor<T>& fused, const MemoryBank<T>& bank, double temperature) {
  require(temperature > 0, ErrorKind::InvalidArgument, "memory_recall: temperature must be positive");
  require(fused.dim(0) == static_cast<std::size_t>(bank.dim), ErrorKind::Shape,
          "memory_recall: feature channels do not match the memory dimension");
  const std::size_t h = fused.dim(1), w = fused.dim(2);
  const auto flat = flatten_spatial(fused);
  auto q = num::reshape(num::reduce(num::ReduceKind::Mean, fused, {1, 2}), {fused.dim(0), 1});
  const auto m = bank.as_tensor();
  auto scores = num::scale(num::matmul(m, q), static_cast<T>(1.0 / temperature));  // [K, 1]
  auto slot_weights = num::softmax(scores, 0);
  auto recalled = num::matmul(num::transpose(m), slot_weights);  // [C, 1]
  return similarity_map(flat, recalled, h, w);
}

template <typename T>
Tensor<T> fuse_attention(const Tensor<T>& base, const Tensor<T>& gate_avg, const Tensor<T>& memory, double alpha,
                         const AblationFlags& flags) {
  // Without the gate prior the product with an all-ones map is the identity.
  auto guided = flags.no_gate_prior ? base : num::hadamard(base, gate_avg);
  if (flags.no_memory) return guided;
  require(memory.defined(), ErrorKind::State, "fuse_attention: memory attention missing");
  return num::add(num::scale(guided, static_cast<T>(alpha)), num::scale(memory, static_cast<T>(1.0 - alpha)));
}

template <typename T>
Prediction<T> predict(const Tensor<T>& image, const ModelParams<T>& params, const MemoryBank<T>& bank,
                      const ForwardHooks<T>& hooks) {
  const auto& cfg = params.config;
  Prediction<T> p;
  p.features = backbone_forward(image, params);
  p.aligned = align_features(p.features, params);
  p.gated = gated_integration(p.aligned, params, cfg.ablation.no_gating, hooks.gates ? &*hooks.gates : nullptr);
  const auto& fused = p.gated.fused;
  {
    const auto q = fused.data();
    const std::size_t C = fused.dim(0), hw = fused.dim(1) * fused.dim(2);
    p.query.assign(C, T(0));
    for (std::size_t c = 0; c < C; ++c) {
      T s = T(0);
      for (std::size_t i = 0; i < hw; ++i) s += q[c * hw + i];
      p.query[c] = s / static_cast<T>(hw);
    }
  }
  p.base_attention = base_attention(fused, params);
  if (!cfg.ablation.no_memory) p.memory_attention = memory_recall(fused, bank, cfg.memory_temperature);
  if (hooks.final_attention) {
    require(hooks.final_attention->shape() == p.base_attention.shape(), ErrorKind::Shape,
            "predict: forced attention has shape " + num::shape_str(hooks.final_attention->shape()));
    p.final_attention = *hooks.final_attention;
  } else {
    p.final_attention = fuse_attention(p.base_attention, p.gated.gate_avg, p.memory_attention, cfg.alpha, cfg.ablation);
  }
  p.attended = num::hadamard(fused, num::add_scalar(p.final_attention, T(1)));
  auto x = num::silu(conv(p.attended, params, "head.conv", 1, 1));
  auto prob = num::sigmoid(conv(x, params, "head.out", 1, 0));
  auto full = num::bilinear_resize(prob, static_cast<std::size_t>(cfg.input_h), static_cast<std::size_t>(cfg.input_w));
  p.output = num::reshape(full, {full.dim(1), full.dim(2)});
  return p;
}

#define BOXPROMPT_INSTANTIATE(T)                                                                                   \
  template FeatureSet<T> backbone_forward<T>(const Tensor<T>&, const ModelParams<T>&);                           \
  template FeatureSet<T> align_features<T>(const FeatureSet<T>&, const ModelParams<T>&);                         \
  template GatedIntegration<T> gated_integration<T>(const FeatureSet<T>&, const ModelParams<T>&, bool,           \
                                                    const FeatureSet<T>*);                                       \
  template Tensor<T> base_attention<T>(const Tensor<T>&, const ModelParams<T>&);                                 \
  template Tensor<T> memory_recall<T>(const Tensor<T>&, const MemoryBank<T>&, double);                           \
  template Tensor<T> fuse_attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double,             \
                                       const AblationFlags&);                                                    \
  template Prediction<T> predict<T>(const Tensor<T>&, const ModelParams<T>&, const MemoryBank<T>&,               \
                                    const ForwardHooks<T>&);

BOXPROMPT_INSTANTIATE(float)
BOXPROMPT_INSTANTIATE(double)

}  // namespace boxprompt::student
