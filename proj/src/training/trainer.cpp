#include "training/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "numerics/ops.hpp"
#include "student/model.hpp"
#include "training/loss.hpp"

namespace boxprompt::training {

void TrainOptions::validate() const {
  require(epochs >= 0, ErrorKind::Config, "training.epochs must be >= 0");
  require(batch_size >= 1, ErrorKind::Config, "training.batch_size must be >= 1");
  require(lr >= 0 && std::isfinite(lr), ErrorKind::Config, "training.lr must be finite and >= 0");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorKind::Config, "training betas must be in [0, 1)");
  require(eps > 0, ErrorKind::Config, "training.eps must be positive");
  for (int e : checkpoint_epochs) require(e >= 1, ErrorKind::Config, "training.checkpoint_epochs must be >= 1");
}

nlohmann::json TrainOptions::to_json() const {
  return {{"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr},
          {"beta1", beta1},   {"beta2", beta2},           {"eps", eps},
          {"class_balanced", class_balanced}, {"checkpoint_epochs", checkpoint_epochs}};
}

TrainOptions TrainOptions::from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::Config, "training: expected an object");
  TrainOptions o;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") o.epochs = value.get<int>();
      else if (key == "batch_size") o.batch_size = value.get<int>();
      else if (key == "lr") o.lr = value.get<double>();
      else if (key == "beta1") o.beta1 = value.get<double>();
      else if (key == "beta2") o.beta2 = value.get<double>();
      else if (key == "eps") o.eps = value.get<double>();
      else if (key == "class_balanced") o.class_balanced = value.get<bool>();
      else if (key == "checkpoint_epochs") o.checkpoint_epochs = value.get<std::vector<int>>();
      else fail(ErrorKind::Config, "training: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("training: ") + e.what());
  }
  o.validate();
  return o;
}

TrainState init_state(const student::StudentConfig& config, std::uint64_t seed) {
  config.validate();
  TrainState s;
  s.seed = seed;
  s.params = student::init_params<float>(config, mix_seed(seed, 1));
  s.bank = student::init_memory<float>(config, mix_seed(seed, 2));
  for (const auto& [name, t] : s.params.tensors) {
    s.first_moment[name].assign(t.numel(), 0.0f);
    s.second_moment[name].assign(t.numel(), 0.0f);
  }
  return s;
}

double train_step(TrainState& state, const std::vector<const Example*>& batch, const TrainOptions& options) {
  require(!batch.empty(), ErrorKind::InvalidArgument, "train_step: empty batch");
  auto& params = state.params;
  for (auto& [name, t] : params.tensors) t.zero_grad();

  const float inv_b = 1.0f / static_cast<float>(batch.size());
  double loss_sum = 0.0;
  std::vector<std::vector<float>> queries;
  queries.reserve(batch.size());
  for (const Example* ex : batch) {
    auto pred = student::predict(ex->image, params, state.bank);
    auto loss = bce_loss(pred.output, ex->target, options.class_balanced);
    const double value = loss.item();
    require(std::isfinite(value), ErrorKind::Numeric, "train_step: non-finite loss");
    loss_sum += value;
    num::backward(num::scale(loss, inv_b));
    queries.push_back(std::move(pred.query));
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  const auto b1 = static_cast<float>(options.beta1), b2 = static_cast<float>(options.beta2);
  for (auto& [name, tensor] : params.tensors) {
    const auto grad = tensor.grad();
    for (std::size_t i = 0; i < grad.size(); ++i)
      if (!std::isfinite(grad[i])) fail(ErrorKind::Numeric, "train_step: non-finite gradient in " + name);
    if (options.lr == 0.0 || grad.empty()) continue;
    auto& m = state.first_moment.at(name);
    auto& v = state.second_moment.at(name);
    auto w = tensor.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0f - b2) * grad[i] * grad[i];
      const double mh = m[i] / c1, vh = v[i] / c2;
      w[i] = static_cast<float>(w[i] - options.lr * mh / (std::sqrt(vh) + options.eps));
    }
  }
  for (auto& [name, tensor] : params.tensors) tensor.zero_grad();

  if (!params.config.ablation.no_memory) {
    for (const auto& q : queries) student::memory_update<float>(state.bank, q, params.config.ema_rate);
  }
  return loss_sum / static_cast<double>(batch.size());
}

void fit(TrainState& state, const std::vector<Example>& examples, const TrainOptions& options,
         const std::function<void(const TrainState&, const EpochLog&)>& on_epoch) {
  options.validate();
  if (state.epoch >= options.epochs) return;
  require(!examples.empty(), ErrorKind::InvalidArgument, "fit: no training examples");
  std::vector<std::size_t> order(examples.size());
  for (int epoch = state.epoch + 1; epoch <= options.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(state.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::vector<const Example*> batch;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(options.batch_size)) {
      batch.clear();
      for (std::size_t j = i; j < std::min(order.size(), i + options.batch_size); ++j) batch.push_back(&examples[order[j]]);
      loss_sum += train_step(state, batch, options);
      ++batches;
    }
    state.epoch = epoch;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_epoch) on_epoch(state, {epoch, loss_sum / static_cast<double>(batches), secs});
  }
}

}  // namespace boxprompt::training
