#include "pipeline/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "common/digest.hpp"
#include "common/error.hpp"
#include "common/rng.hpp"
#include "student/model.hpp"
#include "teacher/teacher.hpp"
#include "training/checkpoint.hpp"
#include "training/loss.hpp"

namespace boxprompt::pipeline {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

num::Tensor<float> mask_tensor(const Mask& m) {
  std::vector<float> v(m.data.begin(), m.data.end());
  return num::Tensor<float>({static_cast<std::size_t>(m.height), static_cast<std::size_t>(m.width)}, std::move(v));
}

}  // namespace

synth::DatasetManifest generate_data(const RunConfig& config) { return synth::write_dataset(config.dataset); }

synth::DatasetManifest open_data(const RunConfig& config) {
  auto manifest = synth::load_manifest(config.dataset.out_dir);
  synth::verify_dataset(manifest);
  require(manifest.height == config.student.input_h && manifest.width == config.student.input_w, ErrorKind::Config,
          "dataset in " + config.dataset.out_dir.string() + " does not match student.input_size");
  return manifest;
}

SupervisionSet supervision(const synth::DatasetManifest& manifest, const TeacherConfig& teacher, std::uint64_t seed) {
  SupervisionSet out;
  const auto records = manifest.split(synth::kTrainSplit);
  double iou_sum = 0.0;
  for (const auto* rec : records) {
    const auto s = synth::load_sample(manifest, *rec);
    Mask m;
    switch (teacher.mode) {
      case Supervision::GroundTruth:
        m = s.gt_mask;
        break;
      case Supervision::DegradedGt:
        m = teacher::pseudo_mask_degraded(s.gt_mask, s.box, teacher.quality, mix_seed(seed, rec->seed)).mask;
        break;
      case Supervision::Classical:
        m = teacher::pseudo_mask_classical(s.image, s.box).mask;
        break;
    }
    iou_sum += teacher::mask_iou(m, s.gt_mask);
    out.masks.push_back(std::move(m));
  }
  out.mean_iou = records.empty() ? 0.0 : iou_sum / static_cast<double>(records.size());
  return out;
}

SupervisionSet teach(const RunConfig& config, std::uint64_t seed, const fs::path& out_dir) {
  const auto manifest = open_data(config);
  auto set = supervision(manifest, config.teacher, seed);
  const auto records = manifest.split(synth::kTrainSplit);
  fs::create_directories(out_dir);
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto name = "pseudo_" + fs::path(records[i]->image_file).stem().string() + ".pgm";
    write_mask_pgm(out_dir / name, set.masks[i]);
    files.push_back({{"image", records[i]->image_file}, {"mask", name}});
  }
  const nlohmann::json summary = {{"mode", std::string(supervision_name(config.teacher.mode))},
                                  {"quality", config.teacher.quality},
                                  {"seed", seed},
                                  {"mean_iou", set.mean_iou},
                                  {"masks", files}};
  write_text(out_dir / "teach_summary.json", summary.dump(2) + "\n");
  return set;
}

num::Tensor<float> image_tensor(const Image& image) {
  return num::Tensor<float>({3, static_cast<std::size_t>(image.height), static_cast<std::size_t>(image.width)}, image.data);
}

std::vector<training::Example> build_examples(const synth::DatasetManifest& manifest, const SupervisionSet& masks) {
  const auto records = manifest.split(synth::kTrainSplit);
  require(records.size() == masks.masks.size(), ErrorKind::State, "build_examples: one mask per training record expected");
  std::vector<training::Example> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto s = synth::load_sample(manifest, *records[i]);
    out.push_back({image_tensor(s.image), mask_tensor(masks.masks[i])});
  }
  return out;
}

training::TrainState train_run(const RunConfig& config, std::uint64_t seed, const fs::path& out_dir,
                               const std::optional<fs::path>& resume) {
  const auto manifest = open_data(config);
  training::TrainState state;
  if (resume) {
    state = training::load_checkpoint(*resume);
    require(state.params.config == config.student, ErrorKind::Config, "resume: checkpoint config differs from the run config");
    require(state.seed == seed, ErrorKind::Config, "resume: checkpoint was trained with a different seed");
  } else {
    state = training::init_state(config.student, seed);
  }
  fs::create_directories(out_dir);
  auto run_json = config.to_json();
  run_json["seeds"] = {seed};
  write_text(out_dir / "run_config.json", run_json.dump(2) + "\n");

  const auto examples = build_examples(manifest, supervision(manifest, config.teacher, seed));
  std::ostringstream log;
  log << "epoch,mean_loss,wall_seconds\n";
  const auto& ckpt_epochs = config.training.checkpoint_epochs;
  training::fit(state, examples, config.training, [&](const training::TrainState& s, const training::EpochLog& e) {
    log << e.epoch << ',' << std::setprecision(9) << e.mean_loss << ',' << std::setprecision(4) << e.wall_seconds << '\n';
    write_text(out_dir / "train_log.csv", log.str());
    if (std::find(ckpt_epochs.begin(), ckpt_epochs.end(), e.epoch) != ckpt_epochs.end())
      training::save_checkpoint(s, out_dir / ("checkpoint_e" + std::to_string(e.epoch) + ".bin"));
  });
  if (!fs::exists(out_dir / "train_log.csv")) write_text(out_dir / "train_log.csv", log.str());
  training::save_checkpoint(state, out_dir / "final.bin");
  return state;
}

eval::MetricsReport evaluate_checkpoint(const RunConfig& config, const fs::path& checkpoint, const std::string& split) {
  const auto manifest = open_data(config);
  const auto state = training::load_checkpoint(checkpoint);
  return eval::evaluate(state, manifest, split, config.eval, sha256_file(checkpoint));
}

double median(std::vector<double> values) {
  require(!values.empty(), ErrorKind::InvalidArgument, "median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<std::pair<std::string, student::AblationFlags>> ablation_variants() {
  return {{"full", {}},
          {"no_memory", {.no_memory = true}},
          {"no_gate_prior", {.no_gate_prior = true}},
          {"no_gating", {.no_gating = true}}};
}

std::vector<AblationRow> run_ablation(const RunConfig& config, const fs::path& out_dir, int threads) {
  const auto manifest = open_data(config);
  const auto variants = ablation_variants();
  const std::size_t n_seeds = config.seeds.size();
  std::vector<AblationRow> rows(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    rows[v].variant = variants[v].first;
    rows[v].ind_f1.assign(n_seeds, 0.0);
    rows[v].ood_f1.assign(n_seeds, 0.0);
  }

  // Supervision depends only on the seed, so it is shared across variants.
  std::vector<std::vector<training::Example>> examples(n_seeds);
  for (std::size_t s = 0; s < n_seeds; ++s)
    examples[s] = build_examples(manifest, supervision(manifest, config.teacher, config.seeds[s]));

  const std::size_t jobs = variants.size() * n_seeds;
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t job = next++; job < jobs; job = next++) {
      const std::size_t v = job / n_seeds, s = job % n_seeds;
      try {
        auto student = config.student;
        student.ablation = variants[v].second;
        auto state = training::init_state(student, config.seeds[s]);
        training::fit(state, examples[s], config.training);
        const auto dir = out_dir / variants[v].first / ("seed_" + std::to_string(config.seeds[s]));
        training::save_checkpoint(state, dir / "final.bin");
        const auto ind = eval::evaluate(state, manifest, synth::kTestIndSplit, config.eval);
        const auto ood = eval::evaluate(state, manifest, synth::kTestOodSplit, config.eval);
        eval::write_report(ind, dir, "eval_test_ind");
        eval::write_report(ood, dir, "eval_test_ood");
        rows[v].ind_f1[s] = ind.mean_f1;
        rows[v].ood_f1[s] = ood.mean_f1;
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, jobs);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  std::ostringstream csv;
  csv << "variant,ind_median_f1,ood_median_f1,seeds\n" << std::setprecision(6);
  for (auto& r : rows) {
    r.ind_median = median(r.ind_f1);
    r.ood_median = median(r.ood_f1);
    csv << r.variant << ',' << r.ind_median << ',' << r.ood_median << ',' << n_seeds << '\n';
  }
  write_text(out_dir / "ablation.csv", csv.str());
  return rows;
}

num::GradReport gradcheck_model(const student::StudentConfig& base, std::uint64_t seed,
                                const num::GradcheckOptions& options) {
  auto config = base;
  config.input_h = config.input_w = 16;
  config.validate();
  const auto params = student::init_params<double>(config, seed);
  auto bank = student::init_memory<double>(config, mix_seed(seed, 2));
  bank.frozen = true;

  Rng rng(mix_seed(seed, 0x6c));
  const std::size_t n = 16;
  std::vector<double> pixels(3 * n * n), target(n * n);
  for (auto& v : pixels) v = rng.uniform();
  for (auto& v : target) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
  const num::Tensor<double> image({3, n, n}, pixels);
  const num::Tensor<double> mask({n, n}, target);

  num::NamedTensors named(params.tensors.begin(), params.tensors.end());
  return num::gradcheck(
      [&] { return training::bce_loss(student::predict(image, params, bank).output, mask); }, named, options);
}

int thread_cap() {
  const char* env = std::getenv("BOXPROMPT_THREADS");
  if (!env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) return 1;
  return static_cast<int>(std::min<long>(v, 256));
}

}  // namespace boxprompt::pipeline
