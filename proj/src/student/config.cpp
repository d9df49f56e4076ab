#include "student/config.hpp"

#include <set>

#include "common/error.hpp"

namespace boxprompt::student {

namespace {

int halve_ceil(int n, int times) {
  for (int i = 0; i < times; ++i) n = (n + 1) / 2;
  return n;
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  require(j.is_object(), ErrorKind::Config, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    require(known.count(key) > 0, ErrorKind::Config, "unknown key '" + key + "' in " + where);
  }
}

template <typename V>
void read_opt(const nlohmann::json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::Config, where + "." + key + " has the wrong type");
  }
}

}  // namespace

int StudentConfig::stage_h(int k) const { return halve_ceil(input_h, k + 1); }
int StudentConfig::stage_w(int k) const { return halve_ceil(input_w, k + 1); }

void StudentConfig::validate() const {
  require(input_h >= 16 && input_w >= 16 && input_h % 16 == 0 && input_w % 16 == 0, ErrorKind::Config,
          "student input size must be a multiple of 16 (got " + std::to_string(input_h) + "x" + std::to_string(input_w) + ")");
  for (int c : channels) require(c >= 1, ErrorKind::Config, "backbone channels must be >= 1");
  require(aligned_channels >= 1, ErrorKind::Config, "aligned_channels must be >= 1");
  require(memory_slots >= 1, ErrorKind::Config, "memory_slots must be >= 1");
  require(memory_temperature > 0, ErrorKind::Config, "memory_temperature must be > 0");
  require(ema_rate > 0 && ema_rate <= 1, ErrorKind::Config, "ema_rate must be in (0, 1]");
  require(alpha >= 0 && alpha <= 1, ErrorKind::Config, "alpha must be in [0, 1]");
}

nlohmann::json StudentConfig::to_json() const {
  return {{"input_size", {input_h, input_w}},
          {"channels", channels},
          {"aligned_channels", aligned_channels},
          {"memory_slots", memory_slots},
          {"memory_temperature", memory_temperature},
          {"ema_rate", ema_rate},
          {"alpha", alpha},
          {"ablation",
           {{"no_memory", ablation.no_memory},
            {"no_gate_prior", ablation.no_gate_prior},
            {"no_gating", ablation.no_gating}}}};
}

StudentConfig StudentConfig::from_json(const nlohmann::json& j) {
  const std::string where = "student";
  reject_unknown(j, {"input_size", "channels", "aligned_channels", "memory_slots", "memory_temperature", "ema_rate",
                     "alpha", "ablation"},
                 where);
  StudentConfig c;
  if (j.contains("input_size")) {
    const auto& s = j.at("input_size");
    if (s.is_number_integer()) {
      c.input_h = c.input_w = s.get<int>();
    } else if (s.is_array() && s.size() == 2 && s[0].is_number_integer() && s[1].is_number_integer()) {
      c.input_h = s[0].get<int>();
      c.input_w = s[1].get<int>();
    } else {
      fail(ErrorKind::Config, "student.input_size must be an integer or [h, w]");
    }
  }
  read_opt(j, "channels", c.channels, where);
  read_opt(j, "aligned_channels", c.aligned_channels, where);
  read_opt(j, "memory_slots", c.memory_slots, where);
  read_opt(j, "memory_temperature", c.memory_temperature, where);
  read_opt(j, "ema_rate", c.ema_rate, where);
  read_opt(j, "alpha", c.alpha, where);
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    reject_unknown(a, {"no_memory", "no_gate_prior", "no_gating"}, "student.ablation");
    read_opt(a, "no_memory", c.ablation.no_memory, "student.ablation");
    read_opt(a, "no_gate_prior", c.ablation.no_gate_prior, "student.ablation");
    read_opt(a, "no_gating", c.ablation.no_gating, "student.ablation");
  }
  c.validate();
  return c;
}

}  // namespace boxprompt::student
