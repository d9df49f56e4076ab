#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "common/image.hpp"

namespace boxprompt::synth {

// splice and copymove are the in-distribution families; blurpatch is held
// out of training and serves as the out-of-distribution family.
enum class Family { Splice, CopyMove, BlurPatch };

std::string_view family_name(Family family);
Family parse_family(std::string_view name);

struct Sample {
  Image image;
  Mask gt_mask;
  Box coarse_box;
  Family family = Family::Splice;
  std::uint64_t seed = 0;
};

struct Manipulated {
  Image image;
  Mask gt_mask;
};

// Closed region with a signed pixel distance to its boundary (negative inside).
struct Region {
  enum class Shape { Ellipse, Rectangle } shape = Shape::Ellipse;
  double cx = 0, cy = 0;  // centre, pixel coordinates
  double rx = 0, ry = 0;  // half extents
  double signed_distance(double x, double y) const;
};

// Smooth multi-octave value noise, 2-5 geometric objects and per-pixel
// sensor grain, clamped to [0, 1]. Requires h, w >= 16.
Image gen_background(std::uint64_t seed, int h, int w);

// Tampers one region of `image`. Regions whose mask would be empty or cover
// more than 40% of the image are redrawn up to 10 times before failing.
Manipulated apply_manipulation(const Image& image, Family family, std::uint64_t seed);

// Copy-move of `region` with content taken from (x - dx, y - dy), sampled
// bilinearly. Returns nothing when no pixel changes (e.g. zero shift).
std::optional<Manipulated> copy_move(const Image& image, const Region& region, double dx, double dy);

// Tight box grown independently per side by uniform[0, jitter_frac] times the
// tight side length, clipped to the image.
Box derive_coarse_box(const Mask& gt_mask, double jitter_frac, std::uint64_t seed);

Sample generate_sample(std::uint64_t seed, Family family, int h, int w, double jitter_frac);

// Separable Gaussian blur with clamp-to-edge borders.
Image gaussian_blur(const Image& image, double sigma);

}  // namespace boxprompt::synth
