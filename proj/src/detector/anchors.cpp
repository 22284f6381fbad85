#include "ndk/detector/anchors.hpp"

#include <algorithm>
#include <stdexcept>

namespace ndk::det {

std::vector<AnchorLevel> default_anchor_levels(Index tile) {
  if (tile % 16 != 0) throw std::invalid_argument("tile extent must be a multiple of 16");
  return {{tile / 2, 2, {3, 5}}, {tile / 4, 4, {10, 15}}, {tile / 8, 8, {20, 25}}, {tile / 16, 16, {30}}};
}

Index anchor_count(const std::vector<AnchorLevel>& levels) {
  Index n = 0;
  for (const auto& l : levels) n += static_cast<Index>(l.sizes.size()) * l.extent * l.extent * l.extent;
  return n;
}

std::vector<Index> level_offsets(const std::vector<AnchorLevel>& levels) {
  std::vector<Index> out;
  Index n = 0;
  for (const auto& l : levels) {
    out.push_back(n);
    n += static_cast<Index>(l.sizes.size()) * l.extent * l.extent * l.extent;
  }
  return out;
}

std::vector<Anchor> generate_anchors(const std::vector<AnchorLevel>& levels) {
  std::vector<Anchor> out;
  out.reserve(static_cast<std::size_t>(anchor_count(levels)));
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const AnchorLevel& l = levels[li];
    const double half = (static_cast<double>(l.stride) - 1.0) / 2.0;
    for (std::size_t s = 0; s < l.sizes.size(); ++s) {
      for (Index z = 0; z < l.extent; ++z)
        for (Index y = 0; y < l.extent; ++y)
          for (Index x = 0; x < l.extent; ++x) {
            const Vec3 c(x * l.stride + half, y * l.stride + half, z * l.stride + half);
            out.push_back({{c, l.sizes[s]}, static_cast<int>(li), static_cast<int>(s)});
          }
    }
  }
  return out;
}

AnchorGrid::AnchorGrid(std::vector<AnchorLevel> levels)
    : levels_(std::move(levels)), offsets_(level_offsets(levels_)), count_(anchor_count(levels_)) {}

Index AnchorGrid::index(int level, int slot, Index z, Index y, Index x) const {
  const AnchorLevel& l = levels_[static_cast<std::size_t>(level)];
  return offsets_[static_cast<std::size_t>(level)] + ((slot * l.extent + z) * l.extent + y) * l.extent + x;
}

AnchorLocation AnchorGrid::locate(Index anchor) const {
  if (anchor < 0 || anchor >= count_) throw std::out_of_range("anchor index " + std::to_string(anchor));
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), anchor) - 1;
  const int level = static_cast<int>(it - offsets_.begin());
  const Index e = levels_[static_cast<std::size_t>(level)].extent;
  const Index rel = anchor - *it;
  return {level, static_cast<int>(rel / (e * e * e)), rel % (e * e * e)};
}

Cube AnchorGrid::cube(Index anchor) const {
  const AnchorLocation loc = locate(anchor);
  const AnchorLevel& l = levels_[static_cast<std::size_t>(loc.level)];
  const double half = (static_cast<double>(l.stride) - 1.0) / 2.0;
  const Index x = loc.cell % l.extent, y = (loc.cell / l.extent) % l.extent, z = loc.cell / (l.extent * l.extent);
  return {Vec3(x * l.stride + half, y * l.stride + half, z * l.stride + half),
          l.sizes[static_cast<std::size_t>(loc.slot)]};
}

}  // namespace ndk::det
