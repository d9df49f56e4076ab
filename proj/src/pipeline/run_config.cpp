#include "pipeline/run_config.hpp"

#include <fstream>
#include <set>

#include "common/error.hpp"

namespace boxprompt::pipeline {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  require(j.is_object(), ErrorKind::Config, where + " must be an object");
  for (const auto& [key, value] : j.items())
    require(known.count(key) > 0, ErrorKind::Config, "unknown key '" + key + "' in " + where);
}

template <typename V>
void read_opt(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    fail(ErrorKind::Config, where + "." + key + " has the wrong type");
  }
}

}  // namespace

std::string_view supervision_name(Supervision s) {
  switch (s) {
    case Supervision::DegradedGt:
      return "degraded_gt";
    case Supervision::Classical:
      return "classical";
    case Supervision::GroundTruth:
      return "gt";
  }
  return "unknown";
}

Supervision parse_supervision(std::string_view name) {
  if (name == "degraded_gt") return Supervision::DegradedGt;
  if (name == "classical") return Supervision::Classical;
  if (name == "gt") return Supervision::GroundTruth;
  fail(ErrorKind::Config, "unknown teacher mode '" + std::string(name) + "' (expected degraded_gt, classical or gt)");
}

void RunConfig::validate() const {
  require(dataset.height >= 16 && dataset.width >= 16, ErrorKind::Config, "dataset images must be at least 16x16");
  require(dataset.train_count >= 0 && dataset.test_ind_count >= 0 && dataset.test_ood_count >= 0, ErrorKind::Config,
          "dataset counts must be >= 0");
  require(dataset.jitter_frac >= 0 && dataset.jitter_frac <= 0.5, ErrorKind::Config, "dataset.jitter_frac must be in [0, 0.5]");
  require(dataset.height == student.input_h && dataset.width == student.input_w, ErrorKind::Config,
          "dataset image size must equal student.input_size");
  student.validate();
  require(teacher.quality > 0 && teacher.quality <= 1, ErrorKind::Config, "teacher.quality must be in (0, 1]");
  training.validate();
  require(eval.threshold > 0 && eval.threshold < 1, ErrorKind::Config, "eval.threshold must be in (0, 1)");
  require(!seeds.empty(), ErrorKind::Config, "seeds must not be empty");
}

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown(j, {"dataset", "student", "teacher", "training", "eval", "seeds", "out_dir"}, "config");
  RunConfig c;
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    reject_unknown(d, {"dir", "height", "width", "train_count", "test_ind_count", "test_ood_count", "jitter_frac", "seed"},
                   "dataset");
    std::string dir = c.dataset.out_dir.string();
    read_opt(d, "dir", dir, "dataset");
    c.dataset.out_dir = dir;
    read_opt(d, "height", c.dataset.height, "dataset");
    read_opt(d, "width", c.dataset.width, "dataset");
    read_opt(d, "train_count", c.dataset.train_count, "dataset");
    read_opt(d, "test_ind_count", c.dataset.test_ind_count, "dataset");
    read_opt(d, "test_ood_count", c.dataset.test_ood_count, "dataset");
    read_opt(d, "jitter_frac", c.dataset.jitter_frac, "dataset");
    read_opt(d, "seed", c.dataset.seed, "dataset");
  }
  if (j.contains("student")) c.student = student::StudentConfig::from_json(j.at("student"));
  if (j.contains("teacher")) {
    const auto& t = j.at("teacher");
    reject_unknown(t, {"mode", "quality"}, "teacher");
    std::string mode(supervision_name(c.teacher.mode));
    read_opt(t, "mode", mode, "teacher");
    c.teacher.mode = parse_supervision(mode);
    read_opt(t, "quality", c.teacher.quality, "teacher");
  }
  if (j.contains("training")) c.training = training::TrainOptions::from_json(j.at("training"));
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown(e, {"threshold", "pooled", "perturbation", "perturb_seed"}, "eval");
    read_opt(e, "threshold", c.eval.threshold, "eval");
    read_opt(e, "pooled", c.eval.pooled, "eval");
    read_opt(e, "perturb_seed", c.eval.perturb_seed, "eval");
    if (e.contains("perturbation") && !e.at("perturbation").is_null()) {
      const auto& p = e.at("perturbation");
      reject_unknown(p, {"kind", "level"}, "eval.perturbation");
      std::string kind = "resave8bit";
      eval::Perturbation pert;
      read_opt(p, "kind", kind, "eval.perturbation");
      read_opt(p, "level", pert.level, "eval.perturbation");
      pert.kind = eval::parse_perturb_kind(kind);
      require(pert.level >= 1 && pert.level <= 3, ErrorKind::Config, "eval.perturbation.level must be 1, 2 or 3");
      c.eval.perturbation = pert;
    }
  }
  read_opt(j, "seeds", c.seeds, "config");
  if (j.contains("out_dir")) {
    std::string out;
    read_opt(j, "out_dir", out, "config");
    c.out_dir = out;
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Config, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json e = {{"threshold", eval.threshold}, {"pooled", eval.pooled}, {"perturb_seed", eval.perturb_seed}};
  e["perturbation"] = eval.perturbation
                          ? json{{"kind", std::string(eval::perturb_kind_name(eval.perturbation->kind))},
                                 {"level", eval.perturbation->level}}
                          : json(nullptr);
  return {{"dataset",
           {{"dir", dataset.out_dir.string()},
            {"height", dataset.height},
            {"width", dataset.width},
            {"train_count", dataset.train_count},
            {"test_ind_count", dataset.test_ind_count},
            {"test_ood_count", dataset.test_ood_count},
            {"jitter_frac", dataset.jitter_frac},
            {"seed", dataset.seed}}},
          {"student", student.to_json()},
          {"teacher", {{"mode", std::string(supervision_name(teacher.mode))}, {"quality", teacher.quality}}},
          {"training", training.to_json()},
          {"eval", e},
          {"seeds", seeds},
          {"out_dir", out_dir.string()}};
}

}  // namespace boxprompt::pipeline
