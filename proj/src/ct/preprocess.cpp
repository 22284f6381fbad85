#include "ndk/ct/preprocess.hpp"

#include <cmath>
#include <stdexcept>

namespace ndk::ct {

std::string to_string(const Index3& v) {
  return "(" + std::to_string(v.z) + "," + std::to_string(v.y) + "," + std::to_string(v.x) + ")";
}

Tensor<float> to_tensor(const Volume<float>& volume) {
  return Tensor<float>({1, 1, volume.extent.z, volume.extent.y, volume.extent.x}, volume.voxels);
}

Volume<float> hu_window_normalize(const Volume<std::int16_t>& hu) {
  Volume<float> out = hu.like<float>();
  std::transform(hu.voxels.begin(), hu.voxels.end(), out.voxels.begin(), [](std::int16_t v) { return hu_to_gray(v); });
  return out;
}

Index3 isotropic_extent(const Index3& extent, const Vec3& spacing) {
  const Index3 out{static_cast<Index>(std::lround(extent.z * spacing.z())),
                   static_cast<Index>(std::lround(extent.y * spacing.y())),
                   static_cast<Index>(std::lround(extent.x * spacing.x()))};
  if (out.z < 1 || out.y < 1 || out.x < 1) {
    throw std::invalid_argument("resampling " + to_string(extent) + " gives a degenerate extent " + to_string(out));
  }
  return out;
}

namespace {

// Linear interpolation stencil along one axis: lower index, upper index, weight of upper.
struct Stencil {
  Index lo, hi;
  double t;
};

std::vector<Stencil> stencils(Index out_extent, Index in_extent, double spacing) {
  std::vector<Stencil> s(static_cast<std::size_t>(out_extent));
  for (Index i = 0; i < out_extent; ++i) {
    const double u = std::clamp(static_cast<double>(i) / spacing, 0.0, static_cast<double>(in_extent - 1));
    const Index lo = static_cast<Index>(std::floor(u));
    const Index hi = std::min(lo + 1, in_extent - 1);
    s[static_cast<std::size_t>(i)] = {lo, hi, u - static_cast<double>(lo)};
  }
  return s;
}

std::vector<Index> nearest(Index out_extent, Index in_extent, double spacing) {
  std::vector<Index> s(static_cast<std::size_t>(out_extent));
  for (Index i = 0; i < out_extent; ++i) {
    s[static_cast<std::size_t>(i)] =
        std::clamp<Index>(static_cast<Index>(std::floor(static_cast<double>(i) / spacing + 0.5)), 0, in_extent - 1);
  }
  return s;
}

}  // namespace

Volume<float> resample_isotropic(const Volume<float>& volume) {
  const Index3 ext = isotropic_extent(volume.extent, volume.spacing);
  Volume<float> out(ext);
  out.origin = volume.origin;
  const auto sz = stencils(ext.z, volume.extent.z, volume.spacing.z());
  const auto sy = stencils(ext.y, volume.extent.y, volume.spacing.y());
  const auto sx = stencils(ext.x, volume.extent.x, volume.spacing.x());
  for (Index z = 0; z < ext.z; ++z) {
    const Stencil& a = sz[static_cast<std::size_t>(z)];
    for (Index y = 0; y < ext.y; ++y) {
      const Stencil& b = sy[static_cast<std::size_t>(y)];
      for (Index x = 0; x < ext.x; ++x) {
        const Stencil& c = sx[static_cast<std::size_t>(x)];
        auto lerp_x = [&](Index zz, Index yy) {
          return (1 - c.t) * volume.at(zz, yy, c.lo) + c.t * volume.at(zz, yy, c.hi);
        };
        const double lo = (1 - b.t) * lerp_x(a.lo, b.lo) + b.t * lerp_x(a.lo, b.hi);
        const double hi = (1 - b.t) * lerp_x(a.hi, b.lo) + b.t * lerp_x(a.hi, b.hi);
        out.at(z, y, x) = static_cast<float>((1 - a.t) * lo + a.t * hi);
      }
    }
  }
  return out;
}

Volume<std::uint8_t> resample_mask(const Volume<std::uint8_t>& mask) {
  const Index3 ext = isotropic_extent(mask.extent, mask.spacing);
  Volume<std::uint8_t> out(ext);
  out.origin = mask.origin;
  const auto nz = nearest(ext.z, mask.extent.z, mask.spacing.z());
  const auto ny = nearest(ext.y, mask.extent.y, mask.spacing.y());
  const auto nx = nearest(ext.x, mask.extent.x, mask.spacing.x());
  for (Index z = 0; z < ext.z; ++z)
    for (Index y = 0; y < ext.y; ++y)
      for (Index x = 0; x < ext.x; ++x)
        out.at(z, y, x) = mask.at(nz[static_cast<std::size_t>(z)], ny[static_cast<std::size_t>(y)],
                                  nx[static_cast<std::size_t>(x)]);
  return out;
}

void apply_mask(Volume<float>& volume, const Volume<std::uint8_t>& mask) {
  if (!(volume.extent == mask.extent)) {
    throw std::invalid_argument("mask extent " + to_string(mask.extent) + " differs from volume " +
                                to_string(volume.extent));
  }
  for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
    if (mask.voxels[i] == 0) volume.voxels[i] = 0.0f;
  }
}

NormalizedVolume preprocess(const CtScan& scan, const Volume<std::uint8_t>* mask) {
  NormalizedVolume out;
  out.series_id = scan.series_id;
  out.gray = resample_isotropic(hu_window_normalize(scan.hu));
  if (mask) {
    if (!(mask->extent == scan.hu.extent)) {
      throw std::invalid_argument("mask extent " + to_string(mask->extent) + " differs from scan " +
                                  to_string(scan.hu.extent));
    }
    // The mask shares the scan's grid whatever its header says.
    Volume<std::uint8_t> m = *mask;
    m.spacing = scan.hu.spacing;
    m.origin = scan.hu.origin;
    out.mask = resample_mask(m);
    apply_mask(out.gray, *out.mask);
  }
  return out;
}

std::vector<Index> tile_starts(Index extent, Index tile, Index stride) {
  if (tile < 1 || stride < 1) throw std::invalid_argument("tile and stride must be positive");
  std::vector<Index> starts{0};
  if (extent <= tile) return starts;
  while (starts.back() + tile < extent) starts.push_back(std::min(starts.back() + stride, extent - tile));
  return starts;
}

Volume<float> crop(const Volume<float>& volume, const Index3& offset, const Index3& extent) {
  Volume<float> out(extent, 0.0f);
  out.spacing = volume.spacing;
  out.origin = volume.origin + Vec3(offset.x, offset.y, offset.z).cwiseProduct(volume.spacing);
  for (Index z = 0; z < extent.z; ++z) {
    const Index sz = z + offset.z;
    if (sz < 0 || sz >= volume.extent.z) continue;
    for (Index y = 0; y < extent.y; ++y) {
      const Index sy = y + offset.y;
      if (sy < 0 || sy >= volume.extent.y) continue;
      const Index x0 = std::max<Index>(0, -offset.x);
      const Index x1 = std::min(extent.x, volume.extent.x - offset.x);
      if (x1 <= x0) continue;
      std::copy_n(&volume.at(sz, sy, x0 + offset.x), x1 - x0, &out.at(z, y, x0));
    }
  }
  return out;
}

std::vector<Tile> extract_tiles(const Volume<float>& volume, Index tile, Index overlap) {
  if (volume.empty()) throw std::invalid_argument("cannot tile an empty volume");
  if (overlap < 0 || overlap >= tile) throw std::invalid_argument("tile overlap must lie in [0, tile)");
  const Index stride = tile - overlap;
  std::vector<Tile> tiles;
  for (Index z : tile_starts(volume.extent.z, tile, stride))
    for (Index y : tile_starts(volume.extent.y, tile, stride))
      for (Index x : tile_starts(volume.extent.x, tile, stride)) {
        const Index3 offset{z, y, x};
        tiles.push_back({offset, crop(volume, offset, {tile, tile, tile})});
      }
  return tiles;
}

Volume<std::uint8_t> quantize(const Volume<float>& gray) {
  Volume<std::uint8_t> out = gray.like<std::uint8_t>();
  std::transform(gray.voxels.begin(), gray.voxels.end(), out.voxels.begin(), [](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 255.0f)));
  });
  return out;
}

}  // namespace ndk::ct
