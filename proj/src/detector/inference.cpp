#include "ndk/detector/inference.hpp"

#include "ndk/ct/phantom.hpp"
#include "ndk/ct/preprocess.hpp"
#include "ndk/losses.hpp"

#include <algorithm>
#include <cmath>

namespace ndk::det {

TileScorer model_scorer(Detector<float>& model) {
  return [&model](const Tensor<float>& tile) {
    NoGradGuard guard;
    const auto out = model(Var<float>(tile), false);
    TileScores s;
    for (const auto& level : out) {
      s.cls.push_back(level.cls.value());
      s.reg.push_back(level.reg.value());
    }
    return s;
  };
}

std::vector<ct::Candidate> decode_tile(const TileScores& scores, const AnchorGrid& grid, double threshold, int top_k) {
  if (scores.cls.size() != grid.levels().size() || scores.reg.size() != grid.levels().size()) {
    throw std::invalid_argument("tile scores do not match the anchor levels");
  }
  // Compare in logit space so only survivors pay for exp().
  const double logit_threshold = std::log(threshold / (1.0 - threshold));
  std::vector<std::pair<float, Index>> hits;
  Index base = 0;
  for (std::size_t li = 0; li < grid.levels().size(); ++li) {
    const AnchorLevel& l = grid.levels()[li];
    const Index n = static_cast<Index>(l.sizes.size()) * l.extent * l.extent * l.extent;
    const float* cls = scores.cls[li].data();
    for (Index i = 0; i < n; ++i) {
      if (cls[i] > logit_threshold) hits.emplace_back(cls[i], base + i);
    }
    base += n;
  }
  auto better = [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; };
  if (top_k > 0 && hits.size() > static_cast<std::size_t>(top_k)) {
    std::partial_sort(hits.begin(), hits.begin() + top_k, hits.end(), better);
    hits.resize(static_cast<std::size_t>(top_k));
  } else {
    std::sort(hits.begin(), hits.end(), better);
  }

  std::vector<ct::Candidate> out;
  out.reserve(hits.size());
  for (const auto& [logit, anchor] : hits) {
    const AnchorLocation loc = grid.locate(anchor);
    const Index e = grid.levels()[static_cast<std::size_t>(loc.level)].extent;
    const Index cells = e * e * e;
    const float* reg = scores.reg[static_cast<std::size_t>(loc.level)].data() + 4 * loc.slot * cells + loc.cell;
    const Offsets o{reg[0], reg[cells], reg[2 * cells], std::clamp<double>(reg[3 * cells], -4.0, 4.0)};
    const Cube box = decode_offsets(o, grid.cube(anchor));
    out.push_back({"", box.center, box.side, sigmoid(static_cast<double>(logit))});
  }
  return out;
}

std::vector<ct::Candidate> detect_volume(const ct::NormalizedVolume& volume, const TileScorer& scorer,
                                         const DetectorConfig& config) {
  const ct::Volume<float> gray = ct::masked_gray(volume);
  const AnchorGrid grid(config.levels);
  std::vector<ct::Candidate> all;
  for (const ct::Tile& tile : ct::extract_tiles(gray, config.tile, config.overlap)) {
    const TileScores scores = scorer(ct::to_tensor(tile.volume));
    for (ct::Candidate c : decode_tile(scores, grid, config.score_threshold, config.pre_nms_top_k)) {
      const ct::Vec3 voxel = c.center + ct::Vec3(tile.offset.x, tile.offset.y, tile.offset.z);
      if (!ct::inside_grid(voxel, gray)) continue;
      c.series_id = volume.series_id;
      c.center = ct::voxel_to_world(voxel, gray);
      c.diameter *= gray.spacing.x();
      all.push_back(std::move(c));
    }
  }
  return nms3d(std::move(all), config.nms_iou);
}

std::vector<ct::Candidate> detect_scan(const ct::NormalizedVolume& volume, const Checkpoint& checkpoint,
                                       const DetectorConfig& config) {
  Detector<float> model(config, 0);
  load_state_dict(model, checkpoint, LoadMode::Strict);
  return detect_volume(volume, model_scorer(model), config);
}

}  // namespace ndk::det
