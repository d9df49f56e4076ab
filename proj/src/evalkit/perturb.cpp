#include "evalkit/perturb.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "numerics/ops.hpp"
#include "synthgen/synthgen.hpp"

namespace boxprompt::eval {

std::string_view perturb_kind_name(PerturbKind kind) {
  switch (kind) {
    case PerturbKind::Resave8bit:
      return "resave8bit";
    case PerturbKind::BlurNoise:
      return "blurnoise";
    case PerturbKind::DownUp:
      return "downup";
  }
  return "unknown";
}

PerturbKind parse_perturb_kind(std::string_view name) {
  if (name == "resave8bit") return PerturbKind::Resave8bit;
  if (name == "blurnoise") return PerturbKind::BlurNoise;
  if (name == "downup") return PerturbKind::DownUp;
  fail(ErrorKind::Config, "unknown perturbation '" + std::string(name) + "'");
}

std::string Perturbation::label() const { return std::string(perturb_kind_name(kind)) + ":" + std::to_string(level); }

Image downup(const Image& image, double scale) {
  require(scale > 0 && scale <= 1, ErrorKind::InvalidArgument, "downup: scale must be in (0, 1]");
  const auto h = static_cast<std::size_t>(image.height), w = static_cast<std::size_t>(image.width);
  const auto sh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(h * scale)));
  const auto sw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(w * scale)));
  num::NoGradGuard guard;
  num::Tensor<float> t({3, h, w}, image.data);
  auto back = num::bilinear_resize(num::bilinear_resize(t, sh, sw), h, w);
  Image out(image.height, image.width);
  std::copy(back.data().begin(), back.data().end(), out.data.begin());
  for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

Image perturb(const Image& image, PerturbKind kind, int level, std::uint64_t seed) {
  require(level >= 1 && level <= 3, ErrorKind::InvalidArgument, "perturb: level must be 1, 2 or 3");
  const int i = level - 1;
  switch (kind) {
    case PerturbKind::Resave8bit: {
      constexpr std::array<int, 3> bits{6, 5, 4};
      const float levels = static_cast<float>((1 << bits[i]) - 1);
      Image out = image;
      for (auto& v : out.data) v = std::clamp(std::round(v * levels) / levels, 0.0f, 1.0f);
      return out;
    }
    case PerturbKind::BlurNoise: {
      constexpr std::array<double, 3> blur{0.5, 1.0, 1.5};
      constexpr std::array<double, 3> noise{0.01, 0.02, 0.04};
      Image out = synth::gaussian_blur(image, blur[i]);
      Rng rng(mix_seed(seed, 0xb1));
      for (auto& v : out.data) v = std::clamp(static_cast<float>(v + noise[i] * rng.normal()), 0.0f, 1.0f);
      return out;
    }
    case PerturbKind::DownUp: {
      constexpr std::array<double, 3> scale{0.75, 0.5, 0.25};
      return downup(image, scale[i]);
    }
  }
  fail(ErrorKind::InvalidArgument, "perturb: unknown kind");
}

}  // namespace boxprompt::eval
