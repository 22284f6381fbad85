#pragma once

#include "ndk/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ndk::ct {

/// World or continuous voxel position, always (x, y, z).
using Vec3 = Eigen::Vector3d;

/// Integer voxel offset or extent in grid order (z, y, x).
struct Index3 {
  Index z = 0, y = 0, x = 0;
  Index volume() const { return z * y * x; }
  friend bool operator==(const Index3&, const Index3&) = default;
};

std::string to_string(const Index3& v);

/// Voxel grid with world geometry. Storage is x-fastest, then y, then z.
template <typename T>
struct Volume {
  Index3 extent;
  Vec3 spacing = Vec3::Ones();  // mm per voxel, (x, y, z)
  Vec3 origin = Vec3::Zero();   // world mm of voxel (0,0,0), (x, y, z)
  std::vector<T> voxels;

  Volume() = default;
  explicit Volume(Index3 e, T fill = T{}) : extent(e), voxels(static_cast<std::size_t>(e.volume()), fill) {}

  Index offset(Index z, Index y, Index x) const { return (z * extent.y + y) * extent.x + x; }
  T& at(Index z, Index y, Index x) { return voxels[static_cast<std::size_t>(offset(z, y, x))]; }
  const T& at(Index z, Index y, Index x) const { return voxels[static_cast<std::size_t>(offset(z, y, x))]; }
  bool contains(Index z, Index y, Index x) const {
    return z >= 0 && y >= 0 && x >= 0 && z < extent.z && y < extent.y && x < extent.x;
  }
  bool empty() const { return voxels.empty(); }

  /// Same geometry, different element type.
  template <typename U>
  Volume<U> like(U fill = U{}) const {
    Volume<U> out(extent, fill);
    out.spacing = spacing;
    out.origin = origin;
    return out;
  }
};

struct CtScan {
  std::string series_id;
  Volume<std::int16_t> hu;
};

/// Gray values in [0, 255] on a 1 mm grid.
struct NormalizedVolume {
  std::string series_id;
  Volume<float> gray;
  std::optional<Volume<std::uint8_t>> mask;
};

/// Volume as a [1, 1, D, H, W] tensor.
Tensor<float> to_tensor(const Volume<float>& volume);

}  // namespace ndk::ct
