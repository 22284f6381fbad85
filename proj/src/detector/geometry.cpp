#include "ndk/detector/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ndk::det {

double iou3d(const Cube& a, const Cube& b) {
  double inter = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double lo = std::max(a.center[k] - a.side / 2, b.center[k] - b.side / 2);
    const double hi = std::min(a.center[k] + a.side / 2, b.center[k] + b.side / 2);
    if (hi <= lo) return 0.0;
    inter *= hi - lo;
  }
  const double uni = a.side * a.side * a.side + b.side * b.side * b.side - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

Offsets encode_offsets(const Cube& target, const Cube& anchor) {
  if (target.side <= 0 || anchor.side <= 0) throw std::invalid_argument("encode_offsets: sides must be positive");
  const double a = anchor.side;
  return {(target.center.x() - anchor.center.x()) / a, (target.center.y() - anchor.center.y()) / a,
          (target.center.z() - anchor.center.z()) / a, std::log(target.side / a)};
}

Cube decode_offsets(const Offsets& o, const Cube& anchor) {
  if (anchor.side <= 0) throw std::invalid_argument("decode_offsets: anchor side must be positive");
  const double a = anchor.side;
  return {anchor.center + a * Vec3(o[0], o[1], o[2]), a * std::exp(o[3])};
}

bool ranks_before(const ct::Candidate& a, const ct::Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  for (int k = 0; k < 3; ++k) {
    if (a.center[k] != b.center[k]) return a.center[k] < b.center[k];
  }
  return a.diameter < b.diameter;
}

std::vector<ct::Candidate> nms3d(std::vector<ct::Candidate> candidates, double iou_threshold) {
  std::sort(candidates.begin(), candidates.end(), ranks_before);
  std::vector<ct::Candidate> kept;
  for (auto& c : candidates) {
    const Cube cube{c.center, c.diameter};
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const ct::Candidate& k) {
      return iou3d(cube, Cube{k.center, k.diameter}) > iou_threshold;
    });
    if (!suppressed) kept.push_back(std::move(c));
  }
  return kept;
}

}  // namespace ndk::det
