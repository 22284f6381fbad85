#pragma once

#include "ndk/ct/records.hpp"
#include "ndk/ct/volume.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <vector>

namespace ndk::lhi {

/// One axial slice or patch; rows are y, columns x.
using Image = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// History values in [0, tau].
using LhiImage = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LhiParams {
  int tau = 10;                 // slices a change stays visible
  double delta_threshold = 15;  // gray-level change that counts as motion

  /// Throws std::invalid_argument unless tau >= 1 and delta_threshold > 0.
  void validate() const;
};

/// History image at the last slice of `slices`. A pixel is tau where the last pair changed by
/// more than the threshold and decays by one per quiet pair after that, never below 0.
/// Throws std::invalid_argument for fewer than 2 slices or mismatched extents.
LhiImage compute_lhi(const std::vector<Image>& slices, const LhiParams& params);

/// 11 slices around a candidate, each cropped to 2d x 2d voxels around it.
struct PatchStack {
  std::vector<Image> slices;
  ct::Index3 center;       // candidate voxel (rounded)
  ct::Index3 crop_origin;  // voxel of slices[0](0, 0); z may be negative
  Index side = 0;
  bool truncated = false;  // some slice fell outside the volume and is zero
  ct::Candidate candidate;
};

/// Crops `depth` slices centred on the candidate's slice. Side is max(2, round(2d / spacing.x)).
/// Out-of-volume voxels are zero. Throws std::invalid_argument if the centre lies outside the volume.
PatchStack extract_patch_stack(const ct::Volume<float>& volume, const ct::Candidate& candidate, Index depth = 11);

/// Bilinear resampling with pixel-centre alignment (edge pixels clamped).
Image resize_bilinear(const Image& image, Index rows, Index cols);

/// LHI of the patch stack resized to side x side and divided by tau, so values lie in [0, 1].
Image network_input(const LhiImage& image, const LhiParams& params, Index side = 48);

/// Candidate -> patch stack -> LHI -> network input.
Image candidate_input(const ct::Volume<float>& volume, const ct::Candidate& candidate, const LhiParams& params);

/// Binary PGM (P5) with values scaled from [0, tau] to [0, 255].
void write_pgm(const std::filesystem::path& path, const LhiImage& image, int tau);

}  // namespace ndk::lhi
