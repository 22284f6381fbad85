#include "ndk/ct/phantom.hpp"

#include "ndk/ct/preprocess.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace ndk::ct {

void PhantomConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("phantom config: " + what); };
  if (extent.z < 16 || extent.y < 16 || extent.x < 16) fail("extent must be at least 16 on every axis");
  if (nodule_count < 0) fail("nodule_count must be nonnegative");
  if (vessel_count < 0) fail("vessel_count must be nonnegative");
  if (diameter_min < 3.0 || diameter_max > 30.0 || diameter_min > diameter_max) {
    fail("nodule diameters must satisfy 3 <= diameter_min <= diameter_max <= 30");
  }
  if (vessel_radius_min <= 0 || vessel_radius_min > vessel_radius_max) fail("bad vessel radius range");
  if (drift_min < 0 || drift_min > drift_max) fail("bad drift range");
  if (curvature < 0) fail("curvature must be nonnegative");
  if (noise_sigma < 0) fail("noise_sigma must be nonnegative");
  if (edge_width <= 0) fail("edge_width must be positive");
  if (wall_thickness < 0 || wall_thickness >= extent.y / 2) fail("wall_thickness out of range");
  if (max_retries < 1) fail("max_retries must be positive");
}

namespace {

struct Sphere {
  Vec3 center;  // voxel (x, y, z)
  double radius;
};

struct Tube {
  double radius;
  double zc;
  Eigen::Vector2d p0, velocity, accel;
  Eigen::Vector2d at(double z) const {
    const double t = z - zc;
    return p0 + velocity * t + 0.5 * accel * t * t;
  }
};

double soft(double dist, double radius, double edge) { return 1.0 / (1.0 + std::exp((dist - radius) / edge)); }

}  // namespace

Phantom generate_phantom(const PhantomConfig& cfg, const std::string& series_id) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  const Index3 e = cfg.extent;
  const double lung_y_end = static_cast<double>(e.y - cfg.wall_thickness);

  std::vector<Sphere> spheres;
  for (int n = 0; n < cfg.nodule_count; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      const double r = 0.5 * uniform(cfg.diameter_min, cfg.diameter_max);
      const double m = r + 2.0;
      if (2 * m >= e.x || 2 * m >= e.z || 2 * m >= lung_y_end) continue;
      const Vec3 c(uniform(m, e.x - 1 - m), uniform(m, lung_y_end - 1 - m), uniform(m, e.z - 1 - m));
      placed = std::all_of(spheres.begin(), spheres.end(),
                           [&](const Sphere& s) { return (s.center - c).norm() >= s.radius + r + 4.0; });
      if (placed) spheres.push_back({c, r});
    }
    if (!placed) throw std::runtime_error("phantom: could not place nodule " + std::to_string(n));
  }

  std::vector<Tube> tubes;
  for (int v = 0; v < cfg.vessel_count; ++v) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      Tube t;
      t.radius = uniform(cfg.vessel_radius_min, cfg.vessel_radius_max);
      t.zc = uniform(0.0, static_cast<double>(e.z - 1));
      const double m = t.radius + 2.0;
      t.p0 = {uniform(m, e.x - 1 - m), uniform(m, lung_y_end - 1 - m)};
      const double angle = uniform(0.0, 2.0 * M_PI);
      const double speed = uniform(cfg.drift_min, cfg.drift_max);
      t.velocity = {speed * std::cos(angle), speed * std::sin(angle)};
      t.accel = {uniform(-cfg.curvature, cfg.curvature), uniform(-cfg.curvature, cfg.curvature)};
      placed = true;
      for (Index z = 0; z < e.z && placed; ++z) {
        const Eigen::Vector2d p = t.at(static_cast<double>(z));
        const Vec3 q(p.x(), p.y(), static_cast<double>(z));
        for (const Sphere& s : spheres) {
          if ((s.center - q).norm() < s.radius + t.radius + 3.0) placed = false;
        }
      }
      if (placed) tubes.push_back(t);
    }
    if (!placed) throw std::runtime_error("phantom: could not place vessel " + std::to_string(v));
  }

  Phantom out;
  NormalizedVolume& nv = out.volume;
  nv.series_id = series_id;
  nv.gray = Volume<float>(e);
  nv.gray.origin = cfg.origin;
  Volume<std::uint8_t> mask(e, 1);
  mask.origin = cfg.origin;

  std::normal_distribution<double> noise(0.0, 1.0);
  const double reach = 6.0 * cfg.edge_width;
  for (Index z = 0; z < e.z; ++z) {
    std::vector<Eigen::Vector2d> tube_points;
    for (const Tube& t : tubes) tube_points.push_back(t.at(static_cast<double>(z)));
    for (Index y = 0; y < e.y; ++y) {
      const bool wall = y >= e.y - cfg.wall_thickness;
      const double base = wall ? cfg.wall_gray : cfg.background + cfg.gradient * y / static_cast<double>(e.y - 1);
      for (Index x = 0; x < e.x; ++x) {
        double lesion = 0.0;
        if (!wall) {
          const Vec3 q(static_cast<double>(x), static_cast<double>(y), static_cast<double>(z));
          for (const Sphere& s : spheres) {
            const double d = (q - s.center).norm();
            if (d < s.radius + reach) lesion = std::max(lesion, cfg.nodule_contrast * soft(d, s.radius, cfg.edge_width));
          }
          for (std::size_t i = 0; i < tubes.size(); ++i) {
            const double d = (Eigen::Vector2d(q.x(), q.y()) - tube_points[i]).norm();
            if (d < tubes[i].radius + reach) {
              lesion = std::max(lesion, cfg.vessel_contrast * soft(d, tubes[i].radius, cfg.edge_width));
            }
          }
        } else {
          mask.at(z, y, x) = 0;
        }
        const double g = base + lesion + cfg.noise_sigma * noise(rng);
        nv.gray.at(z, y, x) = static_cast<float>(std::clamp(g, 0.0, 255.0));
      }
    }
  }
  nv.mask = std::move(mask);

  for (const Sphere& s : spheres) {
    out.nodules.push_back({series_id, voxel_to_world(s.center, nv.gray), 2.0 * s.radius});
  }
  for (const Tube& t : tubes) {
    VesselPath path{t.radius, {}};
    for (Index z = 0; z < e.z; ++z) {
      const Eigen::Vector2d p = t.at(static_cast<double>(z));
      const Vec3 v(p.x(), p.y(), static_cast<double>(z));
      if (v.x() >= 0 && v.x() <= e.x - 1 && v.y() >= 0 && v.y() < lung_y_end) {
        path.centerline.push_back(voxel_to_world(v, nv.gray));
      }
    }
    out.vessels.push_back(std::move(path));
  }
  return out;
}

CtScan phantom_to_ct(const NormalizedVolume& volume) {
  CtScan scan;
  scan.series_id = volume.series_id;
  scan.hu = volume.gray.like<std::int16_t>();
  std::transform(volume.gray.voxels.begin(), volume.gray.voxels.end(), scan.hu.voxels.begin(),
                 [](float g) { return static_cast<std::int16_t>(std::lround(gray_to_hu(g))); });
  return scan;
}

Volume<float> masked_gray(const NormalizedVolume& volume) {
  Volume<float> out = volume.gray;
  if (volume.mask) apply_mask(out, *volume.mask);
  return out;
}

}  // namespace ndk::ct
