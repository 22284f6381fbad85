#include "ndk/lhi/lhi.hpp"

#include "ndk/ct/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace ndk::lhi {

void LhiParams::validate() const {
  if (tau < 1) throw std::invalid_argument("LHI tau must be at least 1");
  if (!(delta_threshold > 0)) throw std::invalid_argument("LHI threshold must be positive");
}

LhiImage compute_lhi(const std::vector<Image>& slices, const LhiParams& params) {
  params.validate();
  if (slices.size() < 2) throw std::invalid_argument("LHI needs at least 2 slices");
  const Index rows = slices[0].rows(), cols = slices[0].cols();
  for (const auto& s : slices) {
    if (s.rows() != rows || s.cols() != cols) throw std::invalid_argument("LHI slices differ in extent");
  }
  // Only the most recent firing matters: walk pairs backwards and stop at the first one that fired.
  const auto last = static_cast<Index>(slices.size()) - 1;
  LhiImage out = LhiImage::Zero(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      for (Index k = last; k >= 1 && last - k < params.tau; --k) {
        const double diff = std::abs(static_cast<double>(slices[static_cast<std::size_t>(k)](r, c)) -
                                     static_cast<double>(slices[static_cast<std::size_t>(k - 1)](r, c)));
        if (diff > params.delta_threshold) {
          out(r, c) = params.tau - static_cast<int>(last - k);
          break;
        }
      }
  return out;
}

PatchStack extract_patch_stack(const ct::Volume<float>& volume, const ct::Candidate& candidate, Index depth) {
  if (depth < 2) throw std::invalid_argument("patch stack needs at least 2 slices");
  if (!(candidate.diameter > 0)) throw std::invalid_argument("candidate diameter must be positive");
  const ct::Vec3 v = ct::world_to_voxel(candidate.center, volume);
  if (!ct::inside_grid(v, volume)) {
    throw std::invalid_argument("candidate (" + std::to_string(candidate.center.x()) + ", " +
                                std::to_string(candidate.center.y()) + ", " + std::to_string(candidate.center.z()) +
                                ") lies outside volume " + candidate.series_id);
  }
  PatchStack p;
  p.candidate = candidate;
  p.side = std::max<Index>(2, std::lround(2.0 * candidate.diameter / volume.spacing.x()));
  p.center = {std::lround(v.z()), std::lround(v.y()), std::lround(v.x())};
  // First pixel such that the crop's centre, start + (side - 1) / 2, is within half a voxel of v.
  const double half = (static_cast<double>(p.side) - 1.0) / 2.0;
  p.crop_origin = {p.center.z - depth / 2, static_cast<Index>(std::floor(v.y() - half + 0.5)),
                   static_cast<Index>(std::floor(v.x() - half + 0.5))};
  const ct::Volume<float> block = ct::crop(volume, p.crop_origin, {depth, p.side, p.side});
  for (Index z = 0; z < depth; ++z) {
    p.slices.push_back(Eigen::Map<const Image>(block.voxels.data() + z * p.side * p.side, p.side, p.side));
  }
  p.truncated = p.crop_origin.z < 0 || p.crop_origin.z + depth > volume.extent.z;
  return p;
}

Image resize_bilinear(const Image& image, Index rows, Index cols) {
  if (image.size() == 0 || rows < 1 || cols < 1) throw std::invalid_argument("resize_bilinear: empty image or target");
  auto axis = [](Index out, Index in, Index i, Index& i0, Index& i1, double& w) {
    const double s = std::clamp((static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5,
                                0.0, static_cast<double>(in - 1));
    i0 = static_cast<Index>(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    w = s - static_cast<double>(i0);
  };
  Image out(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    Index r0, r1;
    double wr;
    axis(rows, image.rows(), r, r0, r1, wr);
    for (Index c = 0; c < cols; ++c) {
      Index c0, c1;
      double wc;
      axis(cols, image.cols(), c, c0, c1, wc);
      const double top = (1 - wc) * image(r0, c0) + wc * image(r0, c1);
      const double bottom = (1 - wc) * image(r1, c0) + wc * image(r1, c1);
      out(r, c) = static_cast<float>((1 - wr) * top + wr * bottom);
    }
  }
  return out;
}

Image network_input(const LhiImage& image, const LhiParams& params, Index side) {
  return resize_bilinear(image.cast<float>(), side, side) / static_cast<float>(params.tau);
}

Image candidate_input(const ct::Volume<float>& volume, const ct::Candidate& candidate, const LhiParams& params) {
  return network_input(compute_lhi(extract_patch_stack(volume, candidate).slices, params), params);
}

void write_pgm(const std::filesystem::path& path, const LhiImage& image, int tau) {
  if (tau < 1) throw std::invalid_argument("write_pgm: tau must be at least 1");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  for (Index r = 0; r < image.rows(); ++r)
    for (Index c = 0; c < image.cols(); ++c) {
      const int v = std::clamp(image(r, c), 0, tau);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v / tau))));
    }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace ndk::lhi
