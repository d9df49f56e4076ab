// Links only the shared library and its public header.
#include <doctest.h>

#include <boxprompt/boxprompt.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json take(char* s) {
  REQUIRE(s != nullptr);
  auto j = json::parse(s);
  bp_string_free(s);
  return j;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("boxprompt_capi_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("version and defaults") {
  CHECK(std::string(bp_version()).size() > 0);
  bp_context* ctx = nullptr;
  REQUIRE(bp_context_create(nullptr, &ctx) == BP_OK);
  char* cfg = nullptr;
  REQUIRE(bp_context_config_json(ctx, &cfg) == BP_OK);
  const auto j = take(cfg);
  CHECK(j.at("training").at("epochs") == 20);
  CHECK(j.at("training").at("batch_size") == 8);
  CHECK(j.at("student").at("alpha") == 0.7);

  std::uint64_t flops = 0, params = 0;
  REQUIRE(bp_flops(ctx, &flops, &params, nullptr) == BP_OK);
  CHECK(flops == 28534864);
  CHECK(params == 154934);
  REQUIRE(bp_context_set_input_size(ctx, 224) == BP_OK);
  REQUIRE(bp_flops(ctx, &flops, &params, nullptr) == BP_OK);
  CHECK(params == 154934);
  CHECK(flops > 28534864ULL * 12);
  bp_context_free(ctx);
}

TEST_CASE("errors map to status codes") {
  bp_context* ctx = nullptr;
  CHECK(bp_context_create("{not json", &ctx) == BP_ERR_CONFIG);
  CHECK(ctx == nullptr);
  CHECK(std::string(bp_last_error()).size() > 0);
  CHECK(bp_context_create("{\"bogus\": 1}", &ctx) == BP_ERR_CONFIG);
  CHECK(std::string(bp_last_error()).find("bogus") != std::string::npos);
  CHECK(bp_context_create("{\"training\": {\"epochs\": -1}}", &ctx) == BP_ERR_CONFIG);
  CHECK(bp_context_create(nullptr, nullptr) == BP_ERR_INVALID_ARGUMENT);
  CHECK(bp_context_load("/nonexistent/config.json", &ctx) == BP_ERR_CONFIG);
  REQUIRE(bp_context_create(nullptr, &ctx) == BP_OK);
  CHECK(bp_context_set_epochs(ctx, -3) == BP_ERR_CONFIG);
  CHECK(bp_context_set_input_size(ctx, 50) == BP_ERR_CONFIG);
  CHECK(bp_context_set_out_dir(ctx, nullptr) == BP_ERR_INVALID_ARGUMENT);
  CHECK(bp_eval(ctx, "/nonexistent.bin", "test_ind", nullptr) != BP_OK);
  bp_context_free(ctx);
  bp_context_free(nullptr);

  bp_model* m = nullptr;
  CHECK(bp_model_load("/nonexistent.bin", &m) != BP_OK);
  const auto dir = scratch("bad");
  {
    std::ofstream f(dir / "junk.bin", std::ios::binary);
    f << "definitely not a checkpoint";
  }
  CHECK(bp_model_load((dir / "junk.bin").string().c_str(), &m) == BP_ERR_FORMAT);
  CHECK(m == nullptr);
  fs::remove_all(dir);
}

TEST_CASE("small pipeline end to end") {
  const auto dir = scratch("pipeline");
  const json cfg = {{"dataset", {{"dir", (dir / "data").string()}, {"train_count", 16}, {"test_ind_count", 4}, {"test_ood_count", 4}}},
                    {"training", {{"epochs", 1}, {"checkpoint_epochs", json::array({1})}}},
                    {"seeds", {3}},
                    {"out_dir", (dir / "runs").string()}};
  bp_context* ctx = nullptr;
  REQUIRE(bp_context_create(cfg.dump().c_str(), &ctx) == BP_OK);

  char* out = nullptr;
  REQUIRE(bp_gen_data(ctx, &out) == BP_OK);
  CHECK(take(out).at("records") == 24);
  REQUIRE(bp_teach(ctx, &out) == BP_OK);
  const auto teach = take(out);
  CHECK(teach.at("mean_iou").get<double>() > 0.8);

  REQUIRE(bp_train(ctx, nullptr, &out) == BP_OK);
  const auto train = take(out);
  const std::string ckpt = train.at("checkpoint");
  const std::string digest = train.at("checkpoint_digest");
  CHECK(train.at("steps") == 2);
  CHECK(fs::exists(ckpt));

  REQUIRE(bp_eval(ctx, ckpt.c_str(), "test_ood", &out) == BP_OK);
  const auto report = take(out);
  CHECK(report.at("split") == "test_ood");
  CHECK(report.at("samples").size() == 4);
  CHECK(bp_eval(ctx, ckpt.c_str(), "nope", nullptr) != BP_OK);

  bp_model* model = nullptr;
  REQUIRE(bp_model_load(ckpt.c_str(), &model) == BP_OK);
  int h = 0, w = 0;
  REQUIRE(bp_model_input_size(model, &h, &w) == BP_OK);
  CHECK(h == 64);
  CHECK(w == 64);
  std::uint64_t n = 0;
  REQUIRE(bp_model_param_count(model, &n) == BP_OK);
  CHECK(n == 154934);
  std::vector<float> img(3 * 64 * 64, 0.5f), prob(64 * 64, -1.0f), prob2(64 * 64, -1.0f);
  REQUIRE(bp_model_predict(model, img.data(), 64, 64, prob.data()) == BP_OK);
  REQUIRE(bp_model_predict(model, img.data(), 64, 64, prob2.data()) == BP_OK);
  CHECK(prob == prob2);
  for (float v : prob) REQUIRE((v > 0.0f && v < 1.0f));
  CHECK(bp_model_predict(model, img.data(), 32, 32, prob.data()) == BP_ERR_SHAPE);
  CHECK(bp_model_predict(model, nullptr, 64, 64, prob.data()) == BP_ERR_INVALID_ARGUMENT);

  const auto ppm = (dir / "data" / "test_ind_splice_0.ppm").string();
  const auto pgm = (dir / "pred.pgm").string();
  REQUIRE(bp_model_predict_file(model, ppm.c_str(), pgm.c_str()) == BP_OK);
  std::ifstream f(pgm, std::ios::binary);
  std::string magic;
  int pw = 0, ph = 0, maxval = 0;
  f >> magic >> pw >> ph >> maxval;
  CHECK(magic == "P5");
  CHECK(pw == 64);
  CHECK(ph == 64);
  CHECK(maxval == 255);
  f.get();
  std::vector<char> px(64 * 64);
  f.read(px.data(), static_cast<std::streamsize>(px.size()));
  CHECK(f.gcount() == 64 * 64);
  bp_model_free(model);

  // Resuming with no epochs left rewrites an identical checkpoint.
  REQUIRE(bp_train(ctx, ckpt.c_str(), &out) == BP_OK);
  CHECK(take(out).at("checkpoint_digest") == digest);
  bp_context_free(ctx);
  fs::remove_all(dir);
}
