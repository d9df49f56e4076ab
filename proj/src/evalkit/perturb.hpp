#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "common/image.hpp"

namespace boxprompt::eval {

enum class PerturbKind { Resave8bit, BlurNoise, DownUp };

std::string_view perturb_kind_name(PerturbKind kind);
PerturbKind parse_perturb_kind(std::string_view name);

struct Perturbation {
  PerturbKind kind = PerturbKind::Resave8bit;
  int level = 1;  // 1..3, increasing severity
  std::string label() const;
};

// resave8bit: requantize to 6/5/4 bits per channel.
// blurnoise:  Gaussian blur sigma 0.5/1.0/1.5, then noise sigma 0.01/0.02/0.04.
// downup:     bilinear down to 3/4, 1/2, 1/4 of the size and back.
// Output is clamped to [0, 1].
Image perturb(const Image& image, PerturbKind kind, int level, std::uint64_t seed);

// Down/up resampling at an arbitrary scale in (0, 1].
Image downup(const Image& image, double scale);

}  // namespace boxprompt::eval
