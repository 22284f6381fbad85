#pragma once

#include "ndk/ct/volume.hpp"

#include <vector>

namespace ndk::ct {

inline constexpr double kHuLow = -1200.0;
inline constexpr double kHuHigh = 600.0;

/// Clamp to the lung window, then map linearly onto [0, 255].
inline float hu_to_gray(double hu) {
  const double g = std::clamp(hu, kHuLow, kHuHigh);
  return static_cast<float>((g - kHuLow) * 255.0 / (kHuHigh - kHuLow));
}

/// Inverse of hu_to_gray inside the window.
inline double gray_to_hu(double gray) { return gray * (kHuHigh - kHuLow) / 255.0 + kHuLow; }

Volume<float> hu_window_normalize(const Volume<std::int16_t>& hu);

/// Target extent per axis: round(extent * spacing).
Index3 isotropic_extent(const Index3& extent, const Vec3& spacing);

/// Trilinear resampling onto a 1 mm grid sharing the same origin. Samples past the last
/// source voxel are clamped to the border.
Volume<float> resample_isotropic(const Volume<float>& volume);

/// Nearest-neighbour counterpart for masks.
Volume<std::uint8_t> resample_mask(const Volume<std::uint8_t>& mask);

/// Zeroes every voxel whose mask value is 0. Extents must agree.
void apply_mask(Volume<float>& volume, const Volume<std::uint8_t>& mask);

/// Window, resample, then mask (if given; the mask is resampled with nearest neighbour).
NormalizedVolume preprocess(const CtScan& scan, const Volume<std::uint8_t>* mask = nullptr);

/// v = (p - origin) / spacing, component-wise in (x, y, z).
template <typename T>
Vec3 world_to_voxel(const Vec3& world, const Volume<T>& volume) {
  return (world - volume.origin).cwiseQuotient(volume.spacing);
}

template <typename T>
Vec3 voxel_to_world(const Vec3& voxel, const Volume<T>& volume) {
  return volume.origin + voxel.cwiseProduct(volume.spacing);
}

/// True when the continuous voxel position lies within [-0.5, extent - 0.5) on every axis.
template <typename T>
bool inside_grid(const Vec3& voxel, const Volume<T>& volume) {
  return voxel.x() >= -0.5 && voxel.y() >= -0.5 && voxel.z() >= -0.5 && voxel.x() < volume.extent.x - 0.5 &&
         voxel.y() < volume.extent.y - 0.5 && voxel.z() < volume.extent.z - 0.5;
}

struct Tile {
  Index3 offset;  // voxel position of the crop origin in the source volume
  Volume<float> volume;
};

/// Window starts along one axis: 0, stride, 2*stride, ... with the last window clamped so it ends at
/// the volume edge. A single start of 0 when the extent is at most one tile.
std::vector<Index> tile_starts(Index extent, Index tile, Index stride);

/// Sliding-window crops of side `tile`; regions beyond the volume are zero.
std::vector<Tile> extract_tiles(const Volume<float>& volume, Index tile = 96, Index overlap = 32);

/// Single crop at `offset` with zero fill outside the source.
Volume<float> crop(const Volume<float>& volume, const Index3& offset, const Index3& extent);

/// 8-bit copy of a gray volume, for inspection.
Volume<std::uint8_t> quantize(const Volume<float>& gray);

}  // namespace ndk::ct
