#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "common/error.hpp"
#include "evalkit/flops.hpp"
#include "evalkit/metrics.hpp"
#include "evalkit/perturb.hpp"
#include "synthgen/dataset.hpp"
#include "synthgen/synthgen.hpp"
#include "training/checkpoint.hpp"
#include "training/trainer.hpp"

using namespace boxprompt;
using namespace boxprompt::eval;
using num::Tensor;

namespace {

Mask mask_from_bits(int bits, int h, int w) {
  Mask m(h, w);
  for (int i = 0; i < h * w; ++i) m.data[static_cast<std::size_t>(i)] = (bits >> i) & 1;
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("f1 on all 3x3 binary pairs") {
  for (int pb = 0; pb < 512; ++pb) {
    const Mask pm = mask_from_bits(pb, 3, 3);
    std::vector<float> pred(9);
    for (int i = 0; i < 9; ++i) pred[static_cast<std::size_t>(i)] = pm.data[static_cast<std::size_t>(i)] ? 0.5f : 0.49f;
    const Tensor<float> pt({3, 3}, pred);
    for (int gb = 0; gb < 512; ++gb) {
      const Mask gt = mask_from_bits(gb, 3, 3);
      int tp = 0, fp = 0, fn = 0;
      for (int i = 0; i < 9; ++i) {
        const bool p = (pb >> i) & 1, g = (gb >> i) & 1;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
      }
      double expect;
      if (pb == 0 && gb == 0)
        expect = 1.0;
      else if (pb == 0 || gb == 0)
        expect = 0.0;
      else
        expect = 2.0 * tp / (2.0 * tp + fp + fn);
      const double got = f1_fixed(pt, gt, 0.5);
      if (got != expect) {
        CAPTURE(pb);
        CAPTURE(gb);
        REQUIRE(got == expect);
      }
    }
  }
}

TEST_CASE("f1 worked examples") {
  Mask gt(4, 4);
  gt.data = {1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  std::vector<float> p(16, 0.1f);
  p[0] = p[1] = 0.9f;  // TP = 2
  p[5] = 0.7f;         // FP = 1, and gt[2] is the FN
  CHECK(f1_fixed(Tensor<float>({4, 4}, p), gt) == doctest::Approx(4.0 / 6.0).epsilon(1e-15));
  std::vector<float> same(16), comp(16);
  for (int i = 0; i < 16; ++i) {
    same[static_cast<std::size_t>(i)] = gt.data[static_cast<std::size_t>(i)];
    comp[static_cast<std::size_t>(i)] = 1.0f - same[static_cast<std::size_t>(i)];
  }
  CHECK(f1_fixed(Tensor<float>({4, 4}, same), gt) == 1.0);
  CHECK(f1_fixed(Tensor<float>({4, 4}, comp), gt) == 0.0);
  CHECK(f1_fixed(Tensor<float>({4, 4}, std::vector<float>(16, 0.2f)), Mask(4, 4)) == 1.0);
  CHECK(f1_fixed(Tensor<float>({4, 4}, std::vector<float>(16, 0.2f)), gt) == 0.0);
  // The threshold is inclusive.
  CHECK(f1_fixed(Tensor<float>({4, 4}, same), gt, 1.0) == 1.0);
  CHECK_THROWS_AS(f1_fixed(Tensor<float>({4, 3}), gt), Error);
}

TEST_CASE("parameter counting") {
  student::ModelParams<float> toy;
  toy.tensors.emplace("conv.weight", Tensor<float>({4, 2, 3, 3}));
  toy.tensors.emplace("conv.bias", Tensor<float>({4}));
  CHECK(count_params(toy) == 76);
  toy.tensors.emplace("other.weight", Tensor<float>({5, 7}));
  CHECK(count_params(toy) == 76 + 35);

  student::StudentConfig cfg;
  CHECK(count_params(cfg) == 154934);
  CHECK(count_params(student::init_params<float>(cfg, 1)) == 154934);

  // Additive over disjoint groups.
  std::uint64_t by_group = 0;
  for (const auto& spec : student::param_specs(cfg)) by_group += num::shape_numel(spec.shape);
  CHECK(by_group == count_params(cfg));

  auto align_params = [](const student::StudentConfig& c) {
    std::uint64_t n = 0;
    for (const auto& spec : student::param_specs(c))
      if (spec.name.rfind("align.", 0) == 0) n += num::shape_numel(spec.shape);
    return n;
  };
  auto doubled = cfg;
  doubled.aligned_channels *= 2;
  CHECK(align_params(doubled) == 2 * align_params(cfg));
}

TEST_CASE("flop counting") {
  FlopCounter one;
  one.conv("c", 2, 2, 1, 4, 4);
  CHECK(one.total() == 128);

  // Toy net: 3x3 conv 3->8 stride 2 on 16x16 (8x8 out), SiLU, 1x1 conv 8->1, sigmoid.
  FlopCounter toy;
  toy.conv("c1", 8, 3, 3, 8, 8);
  toy.eltwise("silu", 8 * 8 * 8);
  toy.conv("c2", 1, 8, 1, 8, 8);
  toy.eltwise("sigmoid", 64);
  CHECK(toy.total() == 27648 + 512 + 1024 + 64);

  FlopCounter misc;
  misc.matmul("m", 3, 4, 5);
  misc.softmax("s", 10);
  misc.reduce("r", 12);
  misc.resize("same", 2, 4, 4, 4, 4);
  misc.resize("up", 2, 4, 4, 8, 8);
  CHECK(misc.total() == 120 + 40 + 12 + 0 + 7 * 2 * 64);

  // Halving the resolution quarters every convolution term.
  student::StudentConfig big, small;
  big.input_h = big.input_w = 128;
  const auto fb = flop_breakdown(big), fs = flop_breakdown(small);
  REQUIRE(fb.terms().size() == fs.terms().size());
  for (std::size_t i = 0; i < fb.terms().size(); ++i) {
    const auto& name = fb.terms()[i].name;
    const bool is_conv = name.find('.') == std::string::npos || name.rfind("backbone.stage", 0) == 0 ||
                         name.rfind("align.", 0) == 0 || name.rfind("gate.", 0) == 0 || name == "head.conv" ||
                         name == "head.out" || name == "attention.key";
    const bool is_activation = name.find("silu") != std::string::npos || name.find("sigmoid") != std::string::npos ||
                               name.find("resize") != std::string::npos;
    if (is_conv && !is_activation && name != "backbone.input_scale") {
      CAPTURE(name);
      CHECK(fb.terms()[i].flops == 4 * fs.terms()[i].flops);
    }
  }
}

TEST_CASE("default flop count by hand") {
  // Default 64x64 plan, written out term by term.
  const std::uint64_t H = 64, C = 32, hw = 256, K = 16;
  std::uint64_t n = 3 * H * H;                                         // input scale
  n += 2 * 16 * 3 * 9 * 32 * 32 + 16 * 32 * 32;                        // stage 1a + SiLU
  n += 2 * 16 * 16 * 9 * 16 * 16 + 16 * 16 * 16;                       // stage 1b
  n += 2 * 32 * 16 * 9 * 8 * 8 + 32 * 8 * 8;                           // stage 2
  n += 2 * 64 * 32 * 9 * 4 * 4 + 64 * 4 * 4;                          // stage 3
  n += 2 * 128 * 64 * 9 * 2 * 2 + 128 * 2 * 2;                         // stage 4
  n += 2 * C * (16 * 256 + 32 * 64 + 64 * 16 + 128 * 4);               // align 1x1 convs
  n += 3 * 7 * C * hw;                                                 // three resizes
  n += 4 * (2 * C * hw + hw);                                          // gates + sigmoid
  n += C * hw * (4 + 8 + 8 + 4) + hw * 4 + hw * 4;                     // gated integration
  n += 2 * C * 4 * C * 9 * hw;                                         // fusion conv
  n += 2 * C * hw + 4 * hw + 2 * C * hw + 2 * C * C + 2 * hw * C + 2 * hw;  // base attention
  n += C * hw + 2 * K * C + K + 4 * K + 2 * C * K + 2 * hw * C + 2 * hw;    // memory recall
  n += hw + 3 * hw + hw + C * hw;                                      // gate prior, blend, residual
  n += 2 * C * C * 9 * hw + C * hw + 2 * C * hw + hw;                  // head
  n += 7 * H * H;                                                      // final resize
  CHECK(n == 28534864);
  CHECK(count_flops(student::StudentConfig{}) == n);

  student::StudentConfig nm;
  nm.ablation.no_memory = true;
  CHECK(count_flops(nm) == n - (C * hw + 2 * K * C + K + 4 * K + 2 * C * K + 2 * hw * C + 2 * hw) - 3 * hw);
}

TEST_CASE("perturbations") {
  CHECK(parse_perturb_kind("downup") == PerturbKind::DownUp);
  CHECK_THROWS_AS(parse_perturb_kind("jpeg"), Error);
  Perturbation pz{PerturbKind::BlurNoise, 2};
  CHECK(pz.label() == "blurnoise:2");

  for (PerturbKind kind : {PerturbKind::Resave8bit, PerturbKind::BlurNoise, PerturbKind::DownUp}) {
    double prev = 0;
    for (int level = 1; level <= 3; ++level) {
      double total = 0;
      for (std::uint64_t s = 0; s < 100; ++s) {
        const auto img = synth::gen_background(s + 500, 64, 64);
        const auto out = perturb(img, kind, level, s);
        REQUIRE(out.height == img.height);
        double d = 0;
        for (std::size_t i = 0; i < img.data.size(); ++i) {
          REQUIRE((out.data[i] >= 0.0f && out.data[i] <= 1.0f));
          d += std::abs(out.data[i] - img.data[i]);
        }
        total += d / static_cast<double>(img.data.size());
      }
      CAPTURE(perturb_kind_name(kind));
      CAPTURE(level);
      CHECK(total / 100 > 0.0);
      CHECK(total / 100 >= prev);
      prev = total / 100;
    }
    CHECK_THROWS_AS(perturb(synth::gen_background(1, 32, 32), kind, 4, 1), Error);
  }
  const auto img = synth::gen_background(9, 64, 64);
  const auto same = downup(img, 1.0);
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(same.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
  CHECK(perturb(img, PerturbKind::BlurNoise, 2, 5) == perturb(img, PerturbKind::BlurNoise, 2, 5));
}

TEST_CASE("evaluation reports") {
  synth::DatasetConfig dc;
  dc.out_dir = std::filesystem::temp_directory_path() / "boxprompt_test_eval";
  std::filesystem::remove_all(dc.out_dir);
  dc.train_count = 4;
  dc.test_ind_count = 6;
  dc.test_ood_count = 4;
  const auto manifest = synth::write_dataset(dc);

  const auto state = training::init_state(student::StudentConfig{}, 3);
  const auto bytes = training::serialize_checkpoint(state);
  const auto r1 = evaluate(state, manifest, synth::kTestIndSplit);
  const auto r2 = evaluate(state, manifest, synth::kTestIndSplit);
  CHECK(training::serialize_checkpoint(state) == bytes);
  CHECK(r1.samples.size() == 6);
  double sum = 0;
  for (const auto& s : r1.samples) {
    CHECK((s.f1 >= 0.0 && s.f1 <= 1.0));
    sum += s.f1;
  }
  CHECK(r1.mean_f1 == doctest::Approx(sum / 6).epsilon(1e-15));
  CHECK(r1.params == 154934);
  CHECK(r1.flops == 28534864);
  CHECK(r1.perturbation == "none");
  CHECK(r1.to_json().dump() == r2.to_json().dump());
  CHECK(r1.to_csv() == r2.to_csv());

  const auto dir = dc.out_dir / "reports";
  write_report(r1, dir, "a");
  write_report(r2, dir, "b");
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  const auto j = nlohmann::json::parse(slurp(dir / "a.json"));
  CHECK(j.at("split") == "test_ind");

  EvalOptions pooled;
  pooled.pooled = true;
  CHECK(evaluate(state, manifest, synth::kTestOodSplit, pooled).samples.size() == 4);
  EvalOptions pert;
  pert.perturbation = Perturbation{PerturbKind::DownUp, 1};
  CHECK(evaluate(state, manifest, synth::kTestIndSplit, pert).perturbation == "downup:1");
  CHECK_THROWS_AS(evaluate(state, manifest, "nope"), Error);

  student::StudentConfig other;
  other.input_h = other.input_w = 32;
  CHECK_THROWS_AS(evaluate(training::init_state(other, 1), manifest, synth::kTestIndSplit), Error);
  std::filesystem::remove_all(dc.out_dir);
}
