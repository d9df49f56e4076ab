#include "teacher/teacher.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace boxprompt::teacher {

namespace {

constexpr double kInf = 1e20;

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
void edt_1d(const double* f, std::size_t n, double* d, std::vector<int>& v, std::vector<double>& z) {
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < static_cast<int>(n); ++q) {
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + q * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * q - 2.0 * p);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates everywhere.
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < static_cast<int>(n); ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

// Squared Euclidean distance from each pixel to the nearest pixel where
// feature == target.
std::vector<double> squared_distance_to(const Mask& m, std::uint8_t target) {
  const std::size_t h = m.height, w = m.width;
  std::vector<double> grid(h * w);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = m.data[i] == target ? 0.0 : kInf;
  std::vector<double> f(std::max(h, w)), d(std::max(h, w));
  std::vector<int> v;
  std::vector<double> z;
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) f[y] = grid[y * w + x];
    edt_1d(f.data(), h, d.data(), v, z);
    for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = d[y];
  }
  for (std::size_t y = 0; y < h; ++y) {
    edt_1d(grid.data() + y * w, w, d.data(), v, z);
    std::copy(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(w), grid.begin() + static_cast<std::ptrdiff_t>(y * w));
  }
  return grid;
}

Mask clip_to_box(Mask m, const Box& box) {
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (!box.contains(x, y)) m.at(y, x) = 0;
  return m;
}

Mask full_box(int h, int w, const Box& box) {
  Mask m(h, w);
  for (int y = std::max(0, box.y0); y < std::min(h, box.y1); ++y)
    for (int x = std::max(0, box.x0); x < std::min(w, box.x1); ++x) m.at(y, x) = 1;
  return m;
}

// Smooth field in [-1, 1] with max |value| == 1.
std::vector<double> boundary_field(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  constexpr int kCells = 4;
  std::array<double, (kCells + 1) * (kCells + 1)> lattice{};
  for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
  std::vector<double> field(static_cast<std::size_t>(h) * w);
  double peak = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = (x + 0.5) / w * kCells, v = (y + 0.5) / h * kCells;
      const int i = std::min(static_cast<int>(u), kCells - 1), j = std::min(static_cast<int>(v), kCells - 1);
      const double tu = u - i, tv = v - j;
      auto at = [&](int a, int b) { return lattice[static_cast<std::size_t>(b) * (kCells + 1) + a]; };
      const double val = (1 - tv) * ((1 - tu) * at(i, j) + tu * at(i + 1, j)) + tv * ((1 - tu) * at(i, j + 1) + tu * at(i + 1, j + 1));
      field[static_cast<std::size_t>(y) * w + x] = val;
      peak = std::max(peak, std::abs(val));
    }
  }
  if (peak > 0)
    for (auto& v : field) v /= peak;
  return field;
}

Mask deform(const std::vector<double>& sd, const std::vector<double>& field, double radius, const Box& box, int h, int w) {
  Mask m(h, w);
  for (std::size_t i = 0; i < sd.size(); ++i) m.data[i] = sd[i] < radius * field[i] ? 1 : 0;
  return clip_to_box(std::move(m), box);
}

}  // namespace

std::string_view teacher_kind_name(TeacherKind kind) {
  return kind == TeacherKind::DegradedGt ? "degraded_gt" : "classical";
}

TeacherKind parse_teacher_kind(std::string_view name) {
  if (name == "degraded_gt") return TeacherKind::DegradedGt;
  if (name == "classical") return TeacherKind::Classical;
  fail(ErrorKind::Config, "unknown teacher mode: " + std::string(name));
}

double mask_iou(const Mask& a, const Mask& b) {
  require(a.height == b.height && a.width == b.width, ErrorKind::Shape, "mask_iou: shape mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    inter += (a.data[i] && b.data[i]) ? 1 : 0;
    uni += (a.data[i] || b.data[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> signed_distance(const Mask& mask) {
  const auto to_inside = squared_distance_to(mask, 1);
  const auto to_outside = squared_distance_to(mask, 0);
  std::vector<double> sd(mask.data.size());
  for (std::size_t i = 0; i < sd.size(); ++i) {
    // The edge sits half a pixel from the centres on either side.
    sd[i] = mask.data[i] ? -(std::sqrt(to_outside[i]) - 0.5) : std::sqrt(to_inside[i]) - 0.5;
  }
  return sd;
}

PseudoMask pseudo_mask_degraded(const Mask& gt_mask, const Box& box, double quality, std::uint64_t seed) {
  require(quality > 0.0 && quality <= 1.0, ErrorKind::InvalidArgument, "pseudo_mask_degraded: quality must be in (0, 1]");
  require(!gt_mask.empty(), ErrorKind::InvalidArgument, "pseudo_mask_degraded: empty ground truth");
  require(box.contains(tight_box(gt_mask)), ErrorKind::InvalidArgument,
          "pseudo_mask_degraded: box does not contain the ground truth");
  const int h = gt_mask.height, w = gt_mask.width;
  PseudoMask out;
  out.kind = TeacherKind::DegradedGt;
  const Mask base = clip_to_box(gt_mask, box);
  if (quality >= 1.0) {
    out.mask = base;
    out.quality_iou = mask_iou(base, gt_mask);
    return out;
  }

  const auto sd = signed_distance(gt_mask);
  const auto field = boundary_field(h, w, mix_seed(seed, 0x7ea));
  auto iou_at = [&](double r) { return mask_iou(deform(sd, field, r, box, h, w), gt_mask); };

  double lo = 0.0, hi = static_cast<double>(std::max(h, w));
  if (iou_at(hi) >= quality) {
    lo = hi;
  } else {
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      (iou_at(mid) >= quality ? lo : hi) = mid;
    }
  }
  Mask m = deform(sd, field, lo, box, h, w);
  for (int retry = 0; m.empty() && retry < 8; ++retry) {
    lo *= 0.5;
    m = deform(sd, field, lo, box, h, w);
  }
  if (m.empty()) m = base;
  out.quality_iou = mask_iou(m, gt_mask);
  out.mask = std::move(m);
  return out;
}

double otsu_threshold(std::span<const double> values) {
  require(!values.empty(), ErrorKind::InvalidArgument, "otsu_threshold: no values");
  const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const double mn = *mn_it, mx = *mx_it;
  if (mx - mn <= 0) return mx;
  constexpr int kBins = 256;
  std::array<double, kBins> hist{};
  for (double v : values) {
    const int b = std::min(kBins - 1, static_cast<int>((v - mn) / (mx - mn) * kBins));
    hist[b] += 1;
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0;
  for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];
  double w0 = 0, sum0 = 0, best = -1;
  int best_bin = 0;
  for (int b = 0; b < kBins; ++b) {
    w0 += hist[b];
    sum0 += b * hist[b];
    const double w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  // Values strictly above the upper edge of the best bin are foreground.
  return mn + (best_bin + 1) * (mx - mn) / kBins;
}

Mask largest_component(const Mask& mask) {
  const int h = mask.height, w = mask.width;
  std::vector<int> label(mask.data.size(), -1);
  std::vector<int> stack;
  int best_label = -1;
  std::size_t best_size = 0;
  int next = 0;
  for (int start = 0; start < h * w; ++start) {
    if (!mask.data[start] || label[start] >= 0) continue;
    std::size_t size = 0;
    stack.push_back(start);
    label[start] = next;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++size;
      const int y = p / w, x = p % w;
      const int nbrs[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nbrs) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const int q = n[0] * w + n[1];
        if (mask.data[q] && label[q] < 0) {
          label[q] = next;
          stack.push_back(q);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best_label = next;
    }
    ++next;
  }
  Mask out(h, w);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = label[i] == best_label && best_label >= 0 ? 1 : 0;
  return out;
}

PseudoMask pseudo_mask_classical(const Image& image, const Box& box) {
  const int h = image.height, w = image.width;
  require(box.x0 >= 0 && box.y0 >= 0 && box.x1 <= w && box.y1 <= h && box.x0 < box.x1 && box.y0 < box.y1,
          ErrorKind::InvalidArgument, "pseudo_mask_classical: box outside the image");
  require(box.area() >= 4, ErrorKind::InvalidArgument, "pseudo_mask_classical: box area must be >= 4 px");
  PseudoMask out;
  out.kind = TeacherKind::Classical;

  constexpr int kRing = 2;
  std::array<double, 3> mean{}, sq{};
  std::size_t ring = 0;
  for (int y = std::max(0, box.y0 - kRing); y < std::min(h, box.y1 + kRing); ++y) {
    for (int x = std::max(0, box.x0 - kRing); x < std::min(w, box.x1 + kRing); ++x) {
      if (box.contains(x, y)) continue;
      for (int c = 0; c < 3; ++c) {
        mean[c] += image.at(c, y, x);
        sq[c] += static_cast<double>(image.at(c, y, x)) * image.at(c, y, x);
      }
      ++ring;
    }
  }
  if (ring == 0) {
    out.mask = full_box(h, w, box);
    return out;
  }
  std::array<double, 3> spread{};
  for (int c = 0; c < 3; ++c) {
    mean[c] /= static_cast<double>(ring);
    spread[c] = std::sqrt(std::max(0.0, sq[c] / static_cast<double>(ring) - mean[c] * mean[c])) + 0.02;
  }

  std::vector<double> dissim;
  dissim.reserve(static_cast<std::size_t>(box.area()));
  for (int y = box.y0; y < box.y1; ++y) {
    for (int x = box.x0; x < box.x1; ++x) {
      double d = 0;
      for (int c = 0; c < 3; ++c) {
        const double z = (image.at(c, y, x) - mean[c]) / spread[c];
        d += z * z;
      }
      dissim.push_back(std::sqrt(d));
    }
  }
  const auto [mn, mx] = std::minmax_element(dissim.begin(), dissim.end());
  if (*mx - *mn < 1e-6) {
    out.mask = full_box(h, w, box);
    return out;
  }
  const double t = otsu_threshold(dissim);
  Mask fg(h, w);
  std::size_t i = 0;
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x) fg.at(y, x) = dissim[i++] > t ? 1 : 0;
  out.mask = largest_component(fg);
  if (out.mask.empty()) out.mask = full_box(h, w, box);
  return out;
}

}  // namespace boxprompt::teacher
