#include "boxprompt/boxprompt.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "common/digest.hpp"
#include "common/error.hpp"
#include "evalkit/flops.hpp"
#include "json.hpp"
#include "pipeline/pipeline.hpp"
#include "student/model.hpp"
#include "training/checkpoint.hpp"

using namespace boxprompt;
using nlohmann::json;

struct bp_context {
  pipeline::RunConfig config;
};

struct bp_model {
  training::TrainState state;
};

namespace {

thread_local std::string t_last_error;

bp_status status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument:
      return BP_ERR_INVALID_ARGUMENT;
    case ErrorKind::Shape:
      return BP_ERR_SHAPE;
    case ErrorKind::Numeric:
      return BP_ERR_NUMERIC;
    case ErrorKind::Io:
      return BP_ERR_IO;
    case ErrorKind::Format:
      return BP_ERR_FORMAT;
    case ErrorKind::Config:
      return BP_ERR_CONFIG;
    case ErrorKind::State:
      return BP_ERR_STATE;
  }
  return BP_ERR_INTERNAL;
}

// Runs `body`, translating exceptions into a status and the thread-local message.
template <typename F>
bp_status guarded(F&& body) {
  try {
    body();
    t_last_error.clear();
    return BP_OK;
  } catch (const Error& e) {
    t_last_error = e.what();
    return status_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    t_last_error = e.what();
    return BP_ERR_IO;
  } catch (const std::bad_alloc&) {
    t_last_error = "out of memory";
    return BP_ERR_INTERNAL;
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return BP_ERR_INTERNAL;
  } catch (...) {
    t_last_error = "unknown error";
    return BP_ERR_INTERNAL;
  }
}

void need(bool cond, const char* what) { require(cond, ErrorKind::InvalidArgument, what); }

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out_json, const json& j) {
  if (out_json) *out_json = dup_string(j.dump(2));
}

}  // namespace

extern "C" {

const char* bp_version(void) { return "1.0.0"; }

const char* bp_last_error(void) { return t_last_error.c_str(); }

void bp_string_free(char* s) { std::free(s); }

bp_status bp_context_create(const char* config_json, bp_context** out) {
  return guarded([&] {
    need(out != nullptr, "bp_context_create: out is NULL");
    *out = nullptr;
    json j = json::object();
    if (config_json) {
      try {
        j = json::parse(config_json);
      } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
      }
    }
    *out = new bp_context{pipeline::RunConfig::from_json(j)};
  });
}

bp_status bp_context_load(const char* path, bp_context** out) {
  return guarded([&] {
    need(path != nullptr && out != nullptr, "bp_context_load: NULL argument");
    *out = nullptr;
    *out = new bp_context{pipeline::RunConfig::load(path)};
  });
}

void bp_context_free(bp_context* ctx) { delete ctx; }

bp_status bp_context_set_seed(bp_context* ctx, uint64_t seed) {
  return guarded([&] {
    need(ctx != nullptr, "bp_context_set_seed: NULL context");
    ctx->config.seeds = {seed};
  });
}

bp_status bp_context_set_epochs(bp_context* ctx, int epochs) {
  return guarded([&] {
    need(ctx != nullptr, "bp_context_set_epochs: NULL context");
    require(epochs >= 0, ErrorKind::Config, "epochs must be >= 0");
    ctx->config.training.epochs = epochs;
  });
}

bp_status bp_context_set_out_dir(bp_context* ctx, const char* dir) {
  return guarded([&] {
    need(ctx != nullptr && dir != nullptr, "bp_context_set_out_dir: NULL argument");
    ctx->config.out_dir = dir;
  });
}

bp_status bp_context_set_data_dir(bp_context* ctx, const char* dir) {
  return guarded([&] {
    need(ctx != nullptr && dir != nullptr, "bp_context_set_data_dir: NULL argument");
    ctx->config.dataset.out_dir = dir;
  });
}

bp_status bp_context_set_input_size(bp_context* ctx, int size) {
  return guarded([&] {
    need(ctx != nullptr, "bp_context_set_input_size: NULL context");
    auto config = ctx->config;
    config.student.input_h = config.student.input_w = size;
    config.dataset.height = config.dataset.width = size;
    config.validate();
    ctx->config = config;
  });
}

bp_status bp_context_config_json(const bp_context* ctx, char** out_json) {
  return guarded([&] {
    need(ctx != nullptr && out_json != nullptr, "bp_context_config_json: NULL argument");
    emit(out_json, ctx->config.to_json());
  });
}

bp_status bp_gen_data(bp_context* ctx, char** out_json) {
  return guarded([&] {
    need(ctx != nullptr, "bp_gen_data: NULL context");
    const auto manifest = pipeline::generate_data(ctx->config);
    emit(out_json, {{"dir", manifest.root.string()},
                    {"records", manifest.records.size()},
                    {"family_counts", manifest.family_counts},
                    {"config_digest", manifest.config_digest}});
  });
}

bp_status bp_teach(bp_context* ctx, char** out_json) {
  return guarded([&] {
    need(ctx != nullptr, "bp_teach: NULL context");
    const auto seed = ctx->config.seeds.front();
    const auto set = pipeline::teach(ctx->config, seed, ctx->config.out_dir);
    emit(out_json, {{"out_dir", ctx->config.out_dir.string()}, {"masks", set.masks.size()}, {"mean_iou", set.mean_iou}});
  });
}

bp_status bp_train(bp_context* ctx, const char* resume_checkpoint, char** out_json) {
  return guarded([&] {
    need(ctx != nullptr, "bp_train: NULL context");
    std::optional<std::filesystem::path> resume;
    if (resume_checkpoint) resume = resume_checkpoint;
    const auto seed = ctx->config.seeds.front();
    const auto state = pipeline::train_run(ctx->config, seed, ctx->config.out_dir, resume);
    const auto final_path = ctx->config.out_dir / "final.bin";
    emit(out_json, {{"seed", seed},
                    {"epochs", state.epoch},
                    {"steps", state.step},
                    {"checkpoint", final_path.string()},
                    {"checkpoint_digest", sha256_file(final_path)}});
  });
}

bp_status bp_eval(bp_context* ctx, const char* checkpoint, const char* split, char** out_json) {
  return guarded([&] {
    need(ctx != nullptr && checkpoint != nullptr && split != nullptr, "bp_eval: NULL argument");
    const auto report = pipeline::evaluate_checkpoint(ctx->config, checkpoint, split);
    eval::write_report(report, ctx->config.out_dir, std::string("eval_") + split);
    emit(out_json, report.to_json());
  });
}

bp_status bp_gradcheck(bp_context* ctx, int* pass, char** out_json) {
  return guarded([&] {
    need(ctx != nullptr, "bp_gradcheck: NULL context");
    num::GradcheckOptions options;
    options.eps = 1e-5;
    options.tol = 1e-4;
    options.max_elements_per_param = 32;
    options.seed = ctx->config.seeds.front();
    const auto report = pipeline::gradcheck_model(ctx->config.student, ctx->config.seeds.front(), options);
    if (pass) *pass = report.pass ? 1 : 0;
    emit(out_json, json::parse(report.to_json()));
  });
}

bp_status bp_flops(const bp_context* ctx, uint64_t* flops, uint64_t* params, char** out_json) {
  return guarded([&] {
    need(ctx != nullptr, "bp_flops: NULL context");
    const auto& cfg = ctx->config.student;
    const auto breakdown = eval::flop_breakdown(cfg);
    const auto n_params = eval::count_params(cfg);
    if (flops) *flops = breakdown.total();
    if (params) *params = n_params;
    json terms = json::array();
    for (const auto& t : breakdown.terms()) terms.push_back({{"name", t.name}, {"flops", t.flops}});
    emit(out_json, {{"input_size", {cfg.input_h, cfg.input_w}},
                    {"flops", breakdown.total()},
                    {"params", n_params},
                    {"terms", terms}});
  });
}

bp_status bp_ablate(bp_context* ctx, int threads, char** out_json) {
  return guarded([&] {
    need(ctx != nullptr, "bp_ablate: NULL context");
    const int n = threads > 0 ? threads : pipeline::thread_cap();
    const auto rows = pipeline::run_ablation(ctx->config, ctx->config.out_dir, n);
    json table = json::array();
    for (const auto& r : rows)
      table.push_back({{"variant", r.variant},
                       {"ind_median_f1", r.ind_median},
                       {"ood_median_f1", r.ood_median},
                       {"ind_f1", r.ind_f1},
                       {"ood_f1", r.ood_f1}});
    emit(out_json, {{"seeds", ctx->config.seeds}, {"rows", table}});
  });
}

bp_status bp_model_load(const char* checkpoint, bp_model** out) {
  return guarded([&] {
    need(checkpoint != nullptr && out != nullptr, "bp_model_load: NULL argument");
    *out = nullptr;
    auto model = std::make_unique<bp_model>();
    model->state = training::load_checkpoint(checkpoint);
    model->state.bank.frozen = true;
    *out = model.release();
  });
}

void bp_model_free(bp_model* model) { delete model; }

bp_status bp_model_input_size(const bp_model* model, int* height, int* width) {
  return guarded([&] {
    need(model != nullptr && height != nullptr && width != nullptr, "bp_model_input_size: NULL argument");
    *height = model->state.params.config.input_h;
    *width = model->state.params.config.input_w;
  });
}

bp_status bp_model_param_count(const bp_model* model, uint64_t* count) {
  return guarded([&] {
    need(model != nullptr && count != nullptr, "bp_model_param_count: NULL argument");
    *count = eval::count_params(model->state.params);
  });
}

bp_status bp_model_predict(const bp_model* model, const float* image, int height, int width, float* out) {
  return guarded([&] {
    need(model != nullptr && image != nullptr && out != nullptr, "bp_model_predict: NULL argument");
    const auto& cfg = model->state.params.config;
    require(height == cfg.input_h && width == cfg.input_w, ErrorKind::Shape,
            "bp_model_predict: model expects " + std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w));
    const std::size_t n = static_cast<std::size_t>(height) * width;
    num::NoGradGuard guard;
    num::Tensor<float> input({3, static_cast<std::size_t>(height), static_cast<std::size_t>(width)},
                             std::vector<float>(image, image + 3 * n));
    const auto pred = student::predict(input, model->state.params, model->state.bank);
    std::copy(pred.output.data().begin(), pred.output.data().end(), out);
  });
}

bp_status bp_model_predict_file(const bp_model* model, const char* ppm_path, const char* pgm_path) {
  return guarded([&] {
    need(model != nullptr && ppm_path != nullptr && pgm_path != nullptr, "bp_model_predict_file: NULL argument");
    const Image image = read_ppm(ppm_path);
    const auto& cfg = model->state.params.config;
    require(image.height == cfg.input_h && image.width == cfg.input_w, ErrorKind::Shape,
            std::string("bp_model_predict_file: ") + ppm_path + " is " + std::to_string(image.height) + "x" +
                std::to_string(image.width) + ", model expects " + std::to_string(cfg.input_h) + "x" +
                std::to_string(cfg.input_w));
    num::NoGradGuard guard;
    const auto pred = student::predict(pipeline::image_tensor(image), model->state.params, model->state.bank);
    std::vector<std::uint8_t> gray(pred.output.numel());
    for (std::size_t i = 0; i < gray.size(); ++i)
      gray[i] = static_cast<std::uint8_t>(std::lround(std::clamp(pred.output[i], 0.0f, 1.0f) * 255.0f));
    write_pgm(pgm_path, image.height, image.width, gray);
  });
}

}  // extern "C"
