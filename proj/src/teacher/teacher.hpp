#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "common/image.hpp"

namespace boxprompt::teacher {

enum class TeacherKind { DegradedGt, Classical };

std::string_view teacher_kind_name(TeacherKind kind);
TeacherKind parse_teacher_kind(std::string_view name);

// Binary pseudo-mask, always zero outside the prompting box.
struct PseudoMask {
  Mask mask;
  TeacherKind kind = TeacherKind::DegradedGt;
  double quality_iou = -1.0;  // IoU against ground truth; -1 when not audited
};

// |a & b| / |a | b|, 1 when both are empty.
double mask_iou(const Mask& a, const Mask& b);

// Ground truth clipped to the box, with its boundary pushed in and out along a
// smooth random field. The push radius is bisected per sample so that the IoU
// against the ground truth lands just above `quality`; quality == 1 returns
// gt & box unchanged.
PseudoMask pseudo_mask_degraded(const Mask& gt_mask, const Box& box, double quality, std::uint64_t seed);

// Prompt-only teacher: per-pixel distance to the colour statistics of the
// 2-px ring outside the box, Otsu threshold, largest 4-connected component.
// A box without contrast (or without a ring) falls back to the full box.
PseudoMask pseudo_mask_classical(const Image& image, const Box& box);

// Helpers exposed for testing.
std::vector<double> signed_distance(const Mask& mask);  // < 0 inside, > 0 outside, |d| ~ distance to the edge
double otsu_threshold(std::span<const double> values);
Mask largest_component(const Mask& mask);

}  // namespace boxprompt::teacher
