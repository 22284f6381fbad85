#pragma once

#include "ndk/detector/geometry.hpp"
#include "ndk/tensor.hpp"

#include <vector>

namespace ndk::det {

/// One pyramid level as the anchor generator sees it.
struct AnchorLevel {
  Index extent = 0;  // cubic feature map side
  Index stride = 1;  // tile voxels per cell
  std::vector<double> sizes;  // anchor sides, one per head slot
};

/// Default levels for a 96^3 tile: P2..P5 with sizes {3,5}, {10,15}, {20,25}, {30}.
std::vector<AnchorLevel> default_anchor_levels(Index tile = 96);

struct Anchor {
  Cube cube;      // tile voxel coordinates
  int level = 0;  // index into the level list
  int slot = 0;   // head slot within the level
};

/// Anchors at every cell center (i * stride + (stride - 1) / 2) of every level. Order is level,
/// then slot, then z, y, x, which matches the channel-major layout of the head outputs.
std::vector<Anchor> generate_anchors(const std::vector<AnchorLevel>& levels);

/// Anchor count without materializing the list.
Index anchor_count(const std::vector<AnchorLevel>& levels);

/// Index of the first anchor of each level in generate_anchors order.
std::vector<Index> level_offsets(const std::vector<AnchorLevel>& levels);

/// Position of one anchor inside the head outputs.
struct AnchorLocation {
  int level = 0;
  int slot = 0;
  Index cell = 0;  // (z * E + y) * E + x
};

/// Index arithmetic over the implicit anchor list, without materializing it.
class AnchorGrid {
 public:
  explicit AnchorGrid(std::vector<AnchorLevel> levels);

  Index size() const { return count_; }
  const std::vector<AnchorLevel>& levels() const { return levels_; }
  Index index(int level, int slot, Index z, Index y, Index x) const;
  AnchorLocation locate(Index anchor) const;
  Cube cube(Index anchor) const;

 private:
  std::vector<AnchorLevel> levels_;
  std::vector<Index> offsets_;
  Index count_ = 0;
};

}  // namespace ndk::det
