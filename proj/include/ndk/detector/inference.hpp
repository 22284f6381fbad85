#pragma once

#include "ndk/checkpoint.hpp"
#include "ndk/ct/volume.hpp"
#include "ndk/detector/model.hpp"

#include <functional>
#include <vector>

namespace ndk::det {

/// Head outputs for one tile (batch of one), one entry per level.
struct TileScores {
  std::vector<Tensor<float>> cls;
  std::vector<Tensor<float>> reg;
};

/// Maps a [1, 1, T, T, T] tile to its head outputs. Lets tests substitute a fake network.
using TileScorer = std::function<TileScores(const Tensor<float>& tile)>;

/// Eval-mode forward pass without tape recording. The model must outlive the scorer.
TileScorer model_scorer(Detector<float>& model);

/// Anchors whose probability exceeds `threshold`, decoded to tile voxel coordinates. Keeps the
/// `top_k` best (all when top_k <= 0).
std::vector<ct::Candidate> decode_tile(const TileScores& scores, const AnchorGrid& grid, double threshold, int top_k);

/// Tiles the (masked) volume, scores every tile, maps decoded boxes to world mm, drops centers
/// outside the volume, and runs one global NMS.
std::vector<ct::Candidate> detect_volume(const ct::NormalizedVolume& volume, const TileScorer& scorer,
                                         const DetectorConfig& config);

/// Builds the detector, loads `checkpoint` strictly, and runs detect_volume.
std::vector<ct::Candidate> detect_scan(const ct::NormalizedVolume& volume, const Checkpoint& checkpoint,
                                       const DetectorConfig& config);

}  // namespace ndk::det
