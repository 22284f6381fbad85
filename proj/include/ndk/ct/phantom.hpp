#pragma once

#include "ndk/ct/records.hpp"
#include "ndk/ct/volume.hpp"

#include <cstdint>
#include <vector>

namespace ndk::ct {

/// Synthetic chest phantom on a 1 mm grid. Gray levels are on the [0, 255] scale.
struct PhantomConfig {
  Index3 extent{64, 64, 64};
  Vec3 origin{-100.0, -100.0, -100.0};

  int nodule_count = 2;
  double diameter_min = 12.0;  // mm
  double diameter_max = 19.0;
  double nodule_contrast = 110.0;

  int vessel_count = 3;
  double vessel_radius_min = 2.5;  // mm
  double vessel_radius_max = 4.5;
  double drift_min = 0.5;   // in-plane voxels per slice
  double drift_max = 1.5;
  double curvature = 0.02;  // max change of drift per slice
  double vessel_contrast = 110.0;

  double background = 50.0;
  double gradient = 10.0;        // added linearly from anterior (y = 0) to posterior
  Index wall_thickness = 6;      // posterior band outside the lung mask
  double wall_gray = 150.0;
  double noise_sigma = 4.0;
  double edge_width = 0.5;       // logistic edge scale, voxels

  int max_retries = 500;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct VesselPath {
  double radius = 0.0;
  std::vector<Vec3> centerline;  // world mm, one point per slice the tube crosses
};

struct Phantom {
  NormalizedVolume volume;  // unmasked gray values plus the lung mask
  std::vector<NoduleAnnotation> nodules;
  std::vector<VesselPath> vessels;
};

/// Pure function of the config (seed included). Throws std::runtime_error when objects cannot be
/// placed within `max_retries` attempts.
Phantom generate_phantom(const PhantomConfig& config, const std::string& series_id);

/// Gray values mapped back to HU through the inverse window, 1 mm spacing.
CtScan phantom_to_ct(const NormalizedVolume& volume);

/// Gray values with everything outside the mask set to zero (the volume itself when there is no mask).
Volume<float> masked_gray(const NormalizedVolume& volume);

}  // namespace ndk::ct
