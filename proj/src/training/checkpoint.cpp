#include "training/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "common/error.hpp"
#include "json.hpp"
#include "student/params.hpp"

namespace boxprompt::training {

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  const char* bytes(std::size_t n) {
    require(n <= in_.size() - pos_, ErrorKind::Format, "checkpoint: truncated file");
    const char* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename U>
  U uint() {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes(sizeof(U)));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  std::string str() {
    const auto n = uint<std::uint32_t>();
    return std::string(bytes(n), n);
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

void write_arrays(Writer& w, const std::map<std::string, std::vector<float>>& arrays) {
  std::uint64_t total = 0;
  for (const auto& [name, a] : arrays) total += a.size();
  w.uint<std::uint64_t>(total);
  for (const auto& [name, a] : arrays)
    for (float v : a) w.f32(v);
}

}  // namespace

std::string serialize_checkpoint(const TrainState& state, bool include_moments) {
  Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.uint<std::uint32_t>(kCheckpointVersion);
  const nlohmann::json meta = {{"student", state.params.config.to_json()}, {"epoch", state.epoch}, {"seed", state.seed}};
  w.str(meta.dump());
  w.uint<std::uint64_t>(state.step);

  const auto& tensors = state.params.tensors;
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    w.str(name);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.uint<std::uint64_t>(d);
    w.uint<std::uint64_t>(offset);
    offset += t.numel();
  }
  w.uint<std::uint64_t>(offset);
  for (const auto& [name, t] : tensors)
    for (float v : t.data()) w.f32(v);

  w.uint<std::uint8_t>(include_moments ? 1 : 0);
  if (include_moments) {
    write_arrays(w, state.first_moment);
    write_arrays(w, state.second_moment);
  }

  const auto& bank = state.bank;
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(bank.slots));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(bank.dim));
  w.uint<std::uint8_t>(bank.frozen ? 1 : 0);
  for (float v : bank.prototypes) w.f32(v);
  for (auto u : bank.usage) w.uint<std::uint64_t>(u);
  return w.take();
}

TrainState deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  require(std::memcmp(r.bytes(8), kCheckpointMagic, 8) == 0, ErrorKind::Format, "checkpoint: bad magic");
  const auto version = r.uint<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorKind::Format,
          "checkpoint: unsupported version " + std::to_string(version));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("checkpoint: bad config block: ") + e.what());
  }
  TrainState s;
  student::StudentConfig config;
  try {
    config = student::StudentConfig::from_json(meta.at("student"));
    s.epoch = meta.at("epoch").get<int>();
    s.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("checkpoint: bad config block: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::Format, std::string("checkpoint: ") + e.what());
  }
  s.step = r.uint<std::uint64_t>();

  std::map<std::string, num::Shape> expected;
  for (const auto& spec : student::param_specs(config)) expected[spec.name] = spec.shape;
  const auto count = r.uint<std::uint32_t>();
  require(count == expected.size(), ErrorKind::Format, "checkpoint: parameter count does not match the config");
  std::vector<std::pair<std::string, num::Shape>> index;
  std::uint64_t offset = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    const auto rank = r.uint<std::uint32_t>();
    require(rank <= 8, ErrorKind::Format, "checkpoint: implausible rank for " + name);
    num::Shape shape(rank);
    for (auto& d : shape) d = r.uint<std::uint64_t>();
    require(r.uint<std::uint64_t>() == offset, ErrorKind::Format, "checkpoint: bad offset for " + name);
    const auto it = expected.find(name);
    require(it != expected.end(), ErrorKind::Format, "checkpoint: unexpected parameter " + name);
    require(it->second == shape, ErrorKind::Format,
            "checkpoint: shape mismatch for " + name + ": " + num::shape_str(shape) + " vs " + num::shape_str(it->second));
    require(index.empty() || index.back().first < name, ErrorKind::Format, "checkpoint: name index not sorted");
    offset += num::shape_numel(shape);
    index.emplace_back(std::move(name), std::move(shape));
  }
  require(r.uint<std::uint64_t>() == offset, ErrorKind::Format, "checkpoint: value count mismatch");
  s.params.config = config;
  for (const auto& [name, shape] : index) {
    std::vector<float> values(num::shape_numel(shape));
    for (auto& v : values) v = r.f32();
    s.params.tensors.emplace(name, num::Tensor<float>::parameter(shape, std::move(values)));
  }

  const auto has_moments = r.uint<std::uint8_t>();
  require(has_moments <= 1, ErrorKind::Format, "checkpoint: bad moments flag");
  for (auto* moments : {&s.first_moment, &s.second_moment}) {
    if (has_moments) require(r.uint<std::uint64_t>() == offset, ErrorKind::Format, "checkpoint: moment count mismatch");
    for (const auto& [name, shape] : index) {
      auto& a = (*moments)[name];
      a.assign(num::shape_numel(shape), 0.0f);
      if (has_moments)
        for (auto& v : a) v = r.f32();
    }
  }

  auto& bank = s.bank;
  bank.slots = static_cast<int>(r.uint<std::uint32_t>());
  bank.dim = static_cast<int>(r.uint<std::uint32_t>());
  require(bank.slots == config.memory_slots && bank.dim == config.aligned_channels, ErrorKind::Format,
          "checkpoint: memory bank shape does not match the config");
  const auto frozen = r.uint<std::uint8_t>();
  require(frozen <= 1, ErrorKind::Format, "checkpoint: bad frozen flag");
  bank.frozen = frozen == 1;
  bank.prototypes.resize(static_cast<std::size_t>(bank.slots) * bank.dim);
  for (auto& v : bank.prototypes) v = r.f32();
  bank.usage.resize(static_cast<std::size_t>(bank.slots));
  for (auto& u : bank.usage) u = r.uint<std::uint64_t>();
  require(r.done(), ErrorKind::Format, "checkpoint: trailing bytes");
  return s;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path, bool include_moments) {
  const auto bytes = serialize_checkpoint(state, include_moments);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace boxprompt::training
