#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "boxprompt/boxprompt.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;

struct ContextDeleter {
  void operator()(bp_context* c) const { bp_context_free(c); }
};
struct ModelDeleter {
  void operator()(bp_model* m) const { bp_model_free(m); }
};
using ContextPtr = std::unique_ptr<bp_context, ContextDeleter>;
using ModelPtr = std::unique_ptr<bp_model, ModelDeleter>;

// Thrown to unwind with an exit code after the message has been printed.
struct Exit {
  int code;
};

void check(bp_status s, const char* what) {
  if (s == BP_OK) return;
  std::cerr << "boxprompt " << what << ": " << bp_last_error() << "\n";
  throw Exit{s == BP_ERR_CONFIG ? kExitConfig : kExitRuntime};
}

void print_and_free(char* json) {
  if (!json) return;
  std::cout << json << "\n";
  bp_string_free(json);
}

struct Common {
  std::string config;
  std::string out;
  std::string seed;
  int epochs = -1;
};

ContextPtr make_context(const Common& o) {
  bp_context* raw = nullptr;
  if (o.config.empty())
    check(bp_context_create(nullptr, &raw), "config");
  else
    check(bp_context_load(o.config.c_str(), &raw), "config");
  ContextPtr ctx(raw);
  if (!o.seed.empty()) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(o.seed.c_str(), &end, 10);
    if (end == o.seed.c_str() || *end != '\0' || o.seed[0] == '-') {
      std::cerr << "boxprompt: --seed must be a non-negative integer\n";
      throw Exit{kExitUsage};
    }
    check(bp_context_set_seed(ctx.get(), v), "seed");
  }
  if (o.epochs >= 0) check(bp_context_set_epochs(ctx.get(), o.epochs), "epochs");
  if (!o.out.empty()) check(bp_context_set_out_dir(ctx.get(), o.out.c_str()), "out");
  return ctx;
}

void add_common(CLI::App* cmd, Common& o, bool with_epochs) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--seed", o.seed, "Seed override (replaces the seed list)");
  if (with_epochs) cmd->add_option("--epochs", o.epochs, "Epoch override")->check(CLI::NonNegativeNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Box-prompted manipulation localization: data, teacher, student training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(bp_version()));

  Common gen, teach, train, evaluate, predict, grad, flops, ablate;
  std::string resume, checkpoint, split = "test_ind";
  std::vector<std::string> images;
  int input_size = 0;
  int threads = 0;

  auto* c_gen = app.add_subcommand("gen-data", "Generate the synthetic dataset (--out overrides the dataset directory)");
  add_common(c_gen, gen, false);
  auto* c_teach = app.add_subcommand("teach", "Write teacher pseudo-masks for the training split");
  add_common(c_teach, teach, false);
  auto* c_train = app.add_subcommand("train", "Train the student on teacher pseudo-masks");
  add_common(c_train, train, true);
  c_train->add_option("--resume", resume, "Checkpoint to continue from");
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint against ground-truth masks");
  add_common(c_eval, evaluate, false);
  c_eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  c_eval->add_option("--split", split, "Split name")->check(CLI::IsMember({"train", "test_ind", "test_ood"}));
  auto* c_predict = app.add_subcommand("predict", "Write probability maps (PGM) for PPM images");
  add_common(c_predict, predict, false);
  c_predict->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  c_predict->add_option("images", images, "Input PPM images")->required();
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of the full model at 16x16, double precision");
  add_common(c_grad, grad, false);
  auto* c_flops = app.add_subcommand("flops", "Analytic parameter and FLOP counts");
  add_common(c_flops, flops, false);
  c_flops->add_option("--input-size", input_size, "Square input size override")->check(CLI::PositiveNumber);
  auto* c_ablate = app.add_subcommand("ablate", "Train and evaluate the four ablation variants over the seed list");
  add_common(c_ablate, ablate, true);
  c_ablate->add_option("--threads", threads, "Parallel runs (default: BOXPROMPT_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    char* json = nullptr;
    if (c_gen->parsed()) {
      Common o = gen;
      const std::string data_dir = o.out;
      o.out.clear();
      auto ctx = make_context(o);
      if (!data_dir.empty()) check(bp_context_set_data_dir(ctx.get(), data_dir.c_str()), "out");
      check(bp_gen_data(ctx.get(), &json), "gen-data");
    } else if (c_teach->parsed()) {
      auto ctx = make_context(teach);
      check(bp_teach(ctx.get(), &json), "teach");
    } else if (c_train->parsed()) {
      auto ctx = make_context(train);
      check(bp_train(ctx.get(), resume.empty() ? nullptr : resume.c_str(), &json), "train");
    } else if (c_eval->parsed()) {
      auto ctx = make_context(evaluate);
      check(bp_eval(ctx.get(), checkpoint.c_str(), split.c_str(), &json), "eval");
    } else if (c_predict->parsed()) {
      bp_model* raw = nullptr;
      check(bp_model_load(checkpoint.c_str(), &raw), "predict");
      ModelPtr model(raw);
      const std::string out_dir = predict.out.empty() ? "." : predict.out;
      std::error_code ec;
      std::filesystem::create_directories(out_dir, ec);
      if (ec) {
        std::cerr << "boxprompt predict: cannot create " << out_dir << ": " << ec.message() << "\n";
        return kExitRuntime;
      }
      for (const auto& img : images) {
        const auto dst = std::filesystem::path(out_dir) / (std::filesystem::path(img).stem().string() + "_prob.pgm");
        check(bp_model_predict_file(model.get(), img.c_str(), dst.string().c_str()), "predict");
        std::cout << dst.string() << "\n";
      }
    } else if (c_grad->parsed()) {
      auto ctx = make_context(grad);
      int pass = 0;
      check(bp_gradcheck(ctx.get(), &pass, &json), "gradcheck");
      print_and_free(json);
      return pass ? kExitOk : kExitRuntime;
    } else if (c_flops->parsed()) {
      auto ctx = make_context(flops);
      if (input_size > 0) check(bp_context_set_input_size(ctx.get(), input_size), "input-size");
      check(bp_flops(ctx.get(), nullptr, nullptr, &json), "flops");
    } else if (c_ablate->parsed()) {
      auto ctx = make_context(ablate);
      check(bp_ablate(ctx.get(), threads, &json), "ablate");
    }
    print_and_free(json);
  } catch (const Exit& e) {
    return e.code;
  }
  return kExitOk;
}
