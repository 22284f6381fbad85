#pragma once

#include "ndk/ct/records.hpp"

#include <array>
#include <vector>

namespace ndk::det {

using ct::Vec3;

/// Axis-aligned cube: center (x, y, z) and side length.
struct Cube {
  Vec3 center = Vec3::Zero();
  double side = 0.0;
};

/// Intersection over union from per-axis overlap products.
double iou3d(const Cube& a, const Cube& b);

/// Regression target (dx, dy, dz, dd) relative to an anchor cube.
using Offsets = std::array<double, 4>;

/// dx = (x - xa) / a, ..., dd = ln(d / a). Throws std::invalid_argument for non-positive sides.
Offsets encode_offsets(const Cube& target, const Cube& anchor);
Cube decode_offsets(const Offsets& offsets, const Cube& anchor);

/// Greedy suppression in descending score order; ties broken by x, then y, then z ascending.
/// A candidate is dropped when its cube IoU with an already kept one exceeds `iou_threshold`.
std::vector<ct::Candidate> nms3d(std::vector<ct::Candidate> candidates, double iou_threshold);

/// The ordering nms3d uses.
bool ranks_before(const ct::Candidate& a, const ct::Candidate& b);

}  // namespace ndk::det
