#include "evalkit/metrics.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "common/digest.hpp"
#include "common/error.hpp"
#include "common/rng.hpp"
#include "evalkit/flops.hpp"
#include "student/model.hpp"

namespace boxprompt::eval {

Confusion confusion(std::span<const float> pred, const Mask& gt, double threshold) {
  require(pred.size() == gt.data.size(), ErrorKind::Shape, "f1: prediction and mask sizes differ");
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= threshold;
    const bool g = gt.data[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f1_from_confusion(const Confusion& c) {
  const bool pred_empty = c.tp + c.fp == 0;
  const bool gt_empty = c.tp + c.fn == 0;
  if (pred_empty && gt_empty) return 1.0;
  if (pred_empty || gt_empty) return 0.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
}

double f1_fixed(const num::Tensor<float>& pred, const Mask& gt, double threshold) {
  require(pred.rank() == 2 && pred.dim(0) == static_cast<std::size_t>(gt.height) &&
              pred.dim(1) == static_cast<std::size_t>(gt.width),
          ErrorKind::Shape, "f1_fixed: prediction " + num::shape_str(pred.shape()) + " does not match the mask");
  return f1_from_confusion(confusion(pred.data(), gt, threshold));
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : samples) per.push_back({{"image", s.image_file}, {"family", s.family}, {"f1", s.f1}});
  return {{"split", split},
          {"mean_f1", mean_f1},
          {"aggregation", pooled ? "pooled" : "per_image"},
          {"threshold", threshold},
          {"perturbation", perturbation},
          {"params", params},
          {"flops", flops},
          {"config_digest", config_digest},
          {"checkpoint_digest", checkpoint_digest},
          {"samples", per}};
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "image,family,f1\n";
  for (const auto& s : samples) os << s.image_file << ',' << s.family << ',' << s.f1 << '\n';
  return os.str();
}

MetricsReport evaluate(const training::TrainState& state, const synth::DatasetManifest& manifest,
                       const std::string& split, const EvalOptions& options, const std::string& checkpoint_digest) {
  const auto records = manifest.split(split);
  require(!records.empty(), ErrorKind::InvalidArgument, "evaluate: split '" + split + "' is empty or missing");
  const auto& cfg = state.params.config;
  require(manifest.height == cfg.input_h && manifest.width == cfg.input_w, ErrorKind::Config,
          "evaluate: dataset is " + std::to_string(manifest.height) + "x" + std::to_string(manifest.width) +
              " but the checkpoint expects " + std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w));

  auto bank = state.bank;
  bank.frozen = true;
  num::NoGradGuard no_grad;

  MetricsReport report;
  report.split = split;
  report.pooled = options.pooled;
  report.threshold = options.threshold;
  report.params = count_params(state.params);
  report.flops = count_flops(cfg);
  report.config_digest = sha256_hex(cfg.to_json().dump());
  report.checkpoint_digest = checkpoint_digest;
  report.perturbation = options.perturbation ? options.perturbation->label() : "none";

  Confusion pooled;
  double sum = 0.0;
  for (const auto* rec : records) {
    auto sample = synth::load_sample(manifest, *rec);
    if (options.perturbation)
      sample.image = perturb(sample.image, options.perturbation->kind, options.perturbation->level,
                             mix_seed(options.perturb_seed, rec->seed));
    num::Tensor<float> image({3, static_cast<std::size_t>(sample.image.height), static_cast<std::size_t>(sample.image.width)},
                             sample.image.data);
    const auto pred = student::predict(image, state.params, bank);
    const auto c = confusion(pred.output.data(), sample.gt_mask, options.threshold);
    pooled.tp += c.tp;
    pooled.fp += c.fp;
    pooled.fn += c.fn;
    pooled.tn += c.tn;
    const double f1 = f1_from_confusion(c);
    sum += f1;
    report.samples.push_back({rec->image_file, std::string(synth::family_name(rec->family)), f1});
  }
  report.mean_f1 = options.pooled ? f1_from_confusion(pooled) : sum / static_cast<double>(records.size());
  return report;
}

void write_report(const MetricsReport& report, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  const auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + p.string());
    out << text;
    require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + p.string());
  };
  write(dir / (stem + ".json"), report.to_json().dump(2) + "\n");
  write(dir / (stem + ".csv"), report.to_csv());
}

}  // namespace boxprompt::eval
