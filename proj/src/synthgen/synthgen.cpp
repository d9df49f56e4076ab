#include "synthgen/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace boxprompt::synth {

// Scene without (grain = false) or with sensor grain.
Image render_scene(std::uint64_t seed, int h, int w, bool grain);

namespace {

constexpr double kMaxAreaFraction = 0.40;
constexpr int kMaxRegionAttempts = 10;
constexpr double kGrainMin = 0.10;
constexpr double kGrainMax = 0.15;

enum StreamTag : std::uint64_t {
  kBackgroundTag = 1,
  kRegionTag,
  kDonorTag,
  kTamperTag,
  kBoxTag,
};

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// One octave of value noise on a (cells+1)^2 lattice, sampled at (x, y) in [0,1)^2.
class ValueNoise {
 public:
  ValueNoise(Rng& rng, int cells) : cells_(cells), lattice_(static_cast<std::size_t>(cells + 1) * (cells + 1)) {
    for (auto& v : lattice_) v = rng.uniform();
  }

  double operator()(double x, double y) const {
    const double u = x * cells_;
    const double v = y * cells_;
    const int i = std::min(static_cast<int>(u), cells_ - 1);
    const int j = std::min(static_cast<int>(v), cells_ - 1);
    const double tu = smoothstep(u - i);
    const double tv = smoothstep(v - j);
    const double a = at(i, j), b = at(i + 1, j), c = at(i, j + 1), d = at(i + 1, j + 1);
    return (1 - tv) * ((1 - tu) * a + tu * b) + tv * ((1 - tu) * c + tu * d);
  }

 private:
  double at(int i, int j) const { return lattice_[static_cast<std::size_t>(j) * (cells_ + 1) + i]; }
  int cells_;
  std::vector<double> lattice_;
};

std::array<double, 3> random_color(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

void paint_objects(Image& img, Rng& rng) {
  const int h = img.height, w = img.width;
  const double scale = std::min(h, w);
  const int count = static_cast<int>(rng.uniform_int(2, 5));
  for (int n = 0; n < count; ++n) {
    const int kind = static_cast<int>(rng.uniform_int(0, 2));
    const double cx = rng.uniform(0, w), cy = rng.uniform(0, h);
    const double rx = rng.uniform(0.08, 0.3) * scale;
    const double ry = kind == 0 ? rx : rng.uniform(0.08, 0.3) * scale;
    const auto c0 = random_color(rng);
    const auto c1 = random_color(rng);
    const double angle = rng.uniform(0, 2 * 3.14159265358979);
    const double gx = std::cos(angle), gy = std::sin(angle);
    const double opacity = rng.uniform(0.6, 1.0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        double d;
        if (kind == 0) {
          d = std::hypot(dx, dy) - rx;
        } else {
          d = std::max(std::abs(dx) - rx, std::abs(dy) - ry);
        }
        const double cover = std::clamp(0.5 - d, 0.0, 1.0) * opacity;
        if (cover <= 0) continue;
        // kind 2 is a linear gradient patch, the others are flat.
        const double t = kind == 2 ? std::clamp(0.5 + (dx * gx + dy * gy) / (2 * std::max(rx, ry)), 0.0, 1.0) : 0.0;
        for (int c = 0; c < 3; ++c) {
          const double col = (1 - t) * c0[c] + t * c1[c];
          float& px = img.at(c, y, x);
          px = static_cast<float>((1 - cover) * px + cover * col);
        }
      }
    }
  }
}

void add_grain(Image& img, Rng& rng, double sigma) {
  for (auto& v : img.data) v = static_cast<float>(v + sigma * rng.normal());
}

void clamp01(Image& img) {
  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

double sample_bilinear(const Image& img, int c, double x, double y) {
  x = std::clamp(x, 0.0, img.width - 1.0);
  y = std::clamp(y, 0.0, img.height - 1.0);
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1)) +
         fy * ((1 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1));
}

Region random_region(Rng& rng, int h, int w) {
  Region r;
  r.shape = rng.bernoulli(0.5) ? Region::Shape::Ellipse : Region::Shape::Rectangle;
  const double area = rng.uniform(0.04, 0.25) * h * w;
  const double aspect = rng.uniform(0.6, 1.6);
  // Ellipse area pi*rx*ry, rectangle 4*rx*ry.
  const double k = r.shape == Region::Shape::Ellipse ? 3.14159265358979 : 4.0;
  r.rx = std::sqrt(area / k * aspect);
  r.ry = std::sqrt(area / k / aspect);
  r.rx = std::min(r.rx, 0.45 * w);
  r.ry = std::min(r.ry, 0.45 * h);
  r.cx = rng.uniform(r.rx + 1, w - r.rx - 1);
  r.cy = rng.uniform(r.ry + 1, h - r.ry - 1);
  return r;
}

bool quantized_differs(const Image& a, const Image& b, int y, int x) {
  for (int c = 0; c < 3; ++c)
    if (quantize8(a.at(c, y, x)) != quantize8(b.at(c, y, x))) return true;
  return false;
}

bool acceptable(const Mask& m) {
  const double frac = static_cast<double>(m.count()) / (static_cast<double>(m.height) * m.width);
  return m.count() > 0 && frac <= kMaxAreaFraction;
}

Manipulated splice(const Image& image, const Region& region, Rng& rng) {
  const int h = image.height, w = image.width;
  // The donor comes from a clean render and is enlarged, so the pasted content
  // lacks this image's sensor grain: the trace a splice leaves.
  const Image donor = render_scene(rng.next_u64(), h, w, false);
  const double zoom = rng.uniform(1.3, 1.7);
  const double ox = rng.uniform(0, w * (1 - 1 / zoom)), oy = rng.uniform(0, h * (1 - 1 / zoom));
  Manipulated out{image, Mask(h, w)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double weight = std::clamp(0.5 - region.signed_distance(x + 0.5, y + 0.5), 0.0, 1.0);
      if (weight <= 0) continue;
      for (int c = 0; c < 3; ++c) {
        const double d = sample_bilinear(donor, c, ox + x / zoom, oy + y / zoom);
        out.image.at(c, y, x) = static_cast<float>((1 - weight) * image.at(c, y, x) + weight * d);
      }
      if (weight > 0.5) out.gt_mask.at(y, x) = 1;
    }
  }
  return out;
}

Manipulated blur_patch(const Image& image, const Region& region, Rng& rng) {
  const Image blurred = gaussian_blur(image, 2.5);
  Manipulated out{image, Mask(image.height, image.width)};
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (region.signed_distance(x + 0.5, y + 0.5) >= 0) continue;
      for (int c = 0; c < 3; ++c)
        out.image.at(c, y, x) = std::clamp(static_cast<float>(blurred.at(c, y, x) + 0.008 * rng.normal()), 0.0f, 1.0f);
      if (quantized_differs(out.image, image, y, x)) out.gt_mask.at(y, x) = 1;
    }
  }
  return out;
}

}  // namespace

std::string_view family_name(Family family) {
  switch (family) {
    case Family::Splice:
      return "splice";
    case Family::CopyMove:
      return "copymove";
    case Family::BlurPatch:
      return "blurpatch";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  if (name == "splice") return Family::Splice;
  if (name == "copymove") return Family::CopyMove;
  if (name == "blurpatch") return Family::BlurPatch;
  fail(ErrorKind::Format, "unknown manipulation family: " + std::string(name));
}

double Region::signed_distance(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  if (shape == Shape::Rectangle) return std::max(std::abs(dx) - rx, std::abs(dy) - ry);
  const double r = std::hypot(dx / rx, dy / ry);
  return (r - 1.0) * std::min(rx, ry);
}

Image render_scene(std::uint64_t seed, int h, int w, bool grain) {
  require(h >= 16 && w >= 16, ErrorKind::InvalidArgument, "gen_background: image must be at least 16x16");
  Rng rng(mix_seed(seed, kBackgroundTag));
  Image img(h, w);
  const auto base = random_color(rng);
  const double contrast = rng.uniform(0.4, 0.6);
  for (int c = 0; c < 3; ++c) {
    std::vector<ValueNoise> octaves;
    for (int o = 0; o < 4; ++o) octaves.emplace_back(rng, 2 << o);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double n = 0, norm = 0, amp = 1;
        for (const auto& oct : octaves) {
          n += amp * oct((x + 0.5) / w, (y + 0.5) / h);
          norm += amp;
          amp *= 0.5;
        }
        img.at(c, y, x) = static_cast<float>(base[c] + contrast * (n / norm - 0.5));
      }
    }
  }
  paint_objects(img, rng);
  const double sigma = rng.uniform(kGrainMin, kGrainMax);
  if (grain) add_grain(img, rng, sigma);
  clamp01(img);
  return img;
}

Image gen_background(std::uint64_t seed, int h, int w) { return render_scene(seed, h, w, true); }

std::optional<Manipulated> copy_move(const Image& image, const Region& region, double dx, double dy) {
  Manipulated out{image, Mask(image.height, image.width)};
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (region.signed_distance(x + 0.5, y + 0.5) >= 0) continue;
      for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = static_cast<float>(sample_bilinear(image, c, x - dx, y - dy));
      if (quantized_differs(out.image, image, y, x)) out.gt_mask.at(y, x) = 1;
    }
  }
  if (out.gt_mask.empty()) return std::nullopt;
  return out;
}

Manipulated apply_manipulation(const Image& image, Family family, std::uint64_t seed) {
  Rng rng(mix_seed(seed, kTamperTag));
  const int h = image.height, w = image.width;
  for (int attempt = 0; attempt < kMaxRegionAttempts; ++attempt) {
    const Region region = random_region(rng, h, w);
    std::optional<Manipulated> result;
    switch (family) {
      case Family::Splice:
        result = splice(image, region, rng);
        break;
      case Family::CopyMove: {
        // Source must lie inside the image; the fractional part of the shift
        // forces resampling of the copied content.
        const double max_dx = std::max(0.0, std::min(region.cx - region.rx, w - region.cx - region.rx) - 1);
        const double max_dy = std::max(0.0, std::min(region.cy - region.ry, h - region.cy - region.ry) - 1);
        const double sx = std::round(rng.uniform(-max_dx, max_dx)) + rng.uniform(0.4, 0.6);
        const double sy = std::round(rng.uniform(-max_dy, max_dy)) + rng.uniform(0.4, 0.6);
        if (std::lround(sx) == 0 && std::lround(sy) == 0) continue;
        result = copy_move(image, region, sx, sy);
        break;
      }
      case Family::BlurPatch:
        result = blur_patch(image, region, rng);
        break;
    }
    if (result && acceptable(result->gt_mask)) return std::move(*result);
  }
  fail(ErrorKind::State, "apply_manipulation: no acceptable region after " + std::to_string(kMaxRegionAttempts) +
                             " attempts (seed " + std::to_string(seed) + ")");
}

Box derive_coarse_box(const Mask& gt_mask, double jitter_frac, std::uint64_t seed) {
  require(jitter_frac >= 0.0 && jitter_frac <= 0.5, ErrorKind::InvalidArgument,
          "derive_coarse_box: jitter_frac must be in [0, 0.5]");
  const Box tight = tight_box(gt_mask);
  Rng rng(mix_seed(seed, kBoxTag));
  const double bw = tight.width(), bh = tight.height();
  auto grow = [&](double len) { return static_cast<int>(std::lround(rng.uniform(0.0, jitter_frac) * len)); };
  Box box;
  box.x0 = std::max(0, tight.x0 - grow(bw));
  box.x1 = std::min(gt_mask.width, tight.x1 + grow(bw));
  box.y0 = std::max(0, tight.y0 - grow(bh));
  box.y1 = std::min(gt_mask.height, tight.y1 + grow(bh));
  return box;
}

Sample generate_sample(std::uint64_t seed, Family family, int h, int w, double jitter_frac) {
  Sample s;
  s.seed = seed;
  s.family = family;
  const Image background = gen_background(mix_seed(seed, kRegionTag), h, w);
  Manipulated m = apply_manipulation(background, family, seed);
  s.image = std::move(m.image);
  s.gt_mask = std::move(m.gt_mask);
  s.coarse_box = derive_coarse_box(s.gt_mask, jitter_frac, seed);
  return s;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0) return image;
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  Image tmp = image, out = image;
  const int h = image.height, w = image.width;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * image.at(c, y, std::clamp(x + i, 0, w - 1));
        tmp.at(c, y, x) = static_cast<float>(acc);
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(c, std::clamp(y + i, 0, h - 1), x);
        out.at(c, y, x) = static_cast<float>(acc);
      }
  }
  return out;
}

}  // namespace boxprompt::synth
