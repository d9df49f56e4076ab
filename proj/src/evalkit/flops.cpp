#include "evalkit/flops.hpp"

namespace boxprompt::eval {

std::uint64_t count_params(const student::StudentConfig& config) {
  std::uint64_t n = 0;
  for (const auto& spec : student::param_specs(config)) n += num::shape_numel(spec.shape);
  return n;
}

void FlopCounter::conv(const std::string& name, std::uint64_t cout, std::uint64_t cin, std::uint64_t k, std::uint64_t ho,
                       std::uint64_t wo) {
  add(name, 2 * cout * cin * k * k * ho * wo);
}

void FlopCounter::matmul(const std::string& name, std::uint64_t m, std::uint64_t n, std::uint64_t k) {
  add(name, 2 * m * n * k);
}

void FlopCounter::eltwise(const std::string& name, std::uint64_t elements, std::uint64_t primitives) {
  add(name, elements * primitives);
}

void FlopCounter::reduce(const std::string& name, std::uint64_t input_elements) { add(name, input_elements); }

void FlopCounter::softmax(const std::string& name, std::uint64_t elements) { add(name, 4 * elements); }

void FlopCounter::resize(const std::string& name, std::uint64_t channels, std::uint64_t in_h, std::uint64_t in_w,
                         std::uint64_t out_h, std::uint64_t out_w) {
  add(name, in_h == out_h && in_w == out_w ? 0 : 7 * channels * out_h * out_w);
}

std::uint64_t FlopCounter::total() const {
  std::uint64_t n = 0;
  for (const auto& t : terms_) n += t.flops;
  return n;
}

FlopCounter flop_breakdown(const student::StudentConfig& cfg) {
  cfg.validate();
  FlopCounter f;
  const auto u = [](int v) { return static_cast<std::uint64_t>(v); };
  const std::uint64_t H = u(cfg.input_h), W = u(cfg.input_w);
  const std::uint64_t C = u(cfg.aligned_channels), K = u(cfg.memory_slots);
  const std::uint64_t h = u(cfg.aligned_h()), w = u(cfg.aligned_w()), hw = h * w;
  const auto& ab = cfg.ablation;

  // backbone: stage 1 has two stride-2 convs, the first at half resolution
  const std::uint64_t h0 = (H + 1) / 2, w0 = (W + 1) / 2;
  f.eltwise("backbone.input_scale", 3 * H * W);
  f.conv("backbone.stage1a", u(cfg.channels[0]), 3, 3, h0, w0);
  f.eltwise("backbone.stage1a.silu", u(cfg.channels[0]) * h0 * w0);
  std::uint64_t cin = u(cfg.channels[0]);
  for (int k = 1; k <= 4; ++k) {
    const std::string name = k == 1 ? "backbone.stage1b" : "backbone.stage" + std::to_string(k);
    const std::uint64_t co = u(cfg.channels[k - 1]), sh = u(cfg.stage_h(k)), sw = u(cfg.stage_w(k));
    f.conv(name, co, cin, 3, sh, sw);
    f.eltwise(name + ".silu", co * sh * sw);
    cin = co;
  }

  for (int k = 1; k <= 4; ++k) {
    const std::uint64_t sh = u(cfg.stage_h(k)), sw = u(cfg.stage_w(k));
    f.conv("align." + std::to_string(k), C, u(cfg.channels[k - 1]), 1, sh, sw);
    f.resize("align." + std::to_string(k) + ".resize", C, sh, sw, h, w);
  }

  if (!ab.no_gating) {
    for (int k = 1; k <= 4; ++k) {
      f.conv("gate." + std::to_string(k), 1, C, 1, h, w);
      f.eltwise("gate." + std::to_string(k) + ".sigmoid", hw);
    }
    f.eltwise("gating.weighted", C * hw, 4);        // G_j * F'_j
    f.eltwise("gating.others", C * hw, 4 * 2);      // three-term sum per level
    f.eltwise("gating.complement", hw, 4);          // 1 - G_i
    f.eltwise("gating.mix", C * hw, 4 * 2);         // (1 - G_i) * sum, + G_i F'_i
    f.eltwise("gating.modulate", C * hw, 4);        // F'_i * F''_i
    f.eltwise("gating.average", hw, 3 + 1);         // three adds and a scale
  }
  f.conv("fusion", C, 4 * C, 3, h, w);

  f.conv("attention.key", 1, C, 1, h, w);
  f.softmax("attention.softmax", hw);
  f.matmul("attention.context", C, 1, hw);
  f.matmul("attention.proj", C, 1, C);
  f.matmul("attention.affinity", 1, hw, C);
  f.eltwise("attention.scale_sigmoid", hw, 2);

  if (!ab.no_memory) {
    f.reduce("memory.query", C * hw);
    f.matmul("memory.scores", K, 1, C);
    f.eltwise("memory.temperature", K);
    f.softmax("memory.softmax", K);
    f.matmul("memory.recall", C, 1, K);
    f.matmul("memory.affinity", 1, hw, C);
    f.eltwise("memory.scale_sigmoid", hw, 2);
  }

  if (!ab.no_gate_prior) f.eltwise("fuse.gate_prior", hw);
  if (!ab.no_memory) f.eltwise("fuse.blend", hw, 3);
  f.eltwise("residual", hw + C * hw);

  f.conv("head.conv", C, C, 3, h, w);
  f.eltwise("head.conv.silu", C * hw);
  f.conv("head.out", 1, C, 1, h, w);
  f.eltwise("head.out.sigmoid", hw);
  f.resize("head.resize", 1, h, w, H, W);
  return f;
}

std::uint64_t count_flops(const student::StudentConfig& config) { return flop_breakdown(config).total(); }

}  // namespace boxprompt::eval
