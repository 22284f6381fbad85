#pragma once

#include "ndk/checkpoint.hpp"
#include "ndk/ct/volume.hpp"
#include "ndk/detector/model.hpp"
#include "ndk/optim.hpp"

#include <functional>
#include <random>
#include <vector>

namespace ndk::pretext {

using det::BackboneConfig;

/// Rotates every axial slice (fixed z) by 90k degrees; slice rows are y, columns x.
/// k=1: R[y][x] = S[n-1-x][y] (transpose, then mirror columns); k=2 mirrors both; k=3 is k=1 inverted.
/// Throws std::invalid_argument for non-square slices or k outside [0, 3].
template <typename T>
ct::Volume<T> rotate_volume(const ct::Volume<T>& volume, int k);

/// Backbone, global average pool of C5, then fc1 (C5 width -> hidden), ReLU, fc2 (hidden -> classes).
template <typename Scalar>
class PretextModel : public Module<Scalar> {
 public:
  PretextModel(const BackboneConfig& backbone, Index hidden, Index classes, std::uint64_t seed);

  /// [N, 1, E, E, E] -> logits [N, classes].
  Var<Scalar> operator()(const Var<Scalar>& x, bool training);
  void collect(StateCollector<Scalar>& out) override;

  det::Backbone<Scalar>& backbone() { return backbone_; }

 private:
  det::Backbone<Scalar> backbone_;
  Linear<Scalar> fc1_, fc2_;
};

/// Mean cross entropy over the batch. Throws std::invalid_argument unless logits are [N, 4]
/// and labels are in [0, 3].
template <typename Scalar>
Var<Scalar> pretext_loss(const Var<Scalar>& logits, const std::vector<int>& labels);

struct PretextConfig {
  BackboneConfig backbone;
  Index hidden = 256;
  int classes = 4;  // only 4 is accepted
  int epochs = 100;
  int batch = 16;  // rotated tiles per step, at least 2
  SgdConfig sgd{0.1, 0.9, 5e-4};
  std::vector<int> milestones{70, 85};
  double gamma = 0.5;
  double clip_norm = 5.0;  // <= 0 disables
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on unusable settings.
  void validate() const;
};

struct PretextEpochReport {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  double accuracy = 0.0;  // training accuracy over all rotated copies of the epoch
};

/// Random crops of side `extent` centred on mask voxels (anywhere when there is no mask), taken
/// from the masked gray volume.
std::vector<ct::Volume<float>> sample_pretext_tiles(const ct::NormalizedVolume& volume, int count, Index extent,
                                                    std::mt19937_64& rng);

/// Every epoch visits each (tile, rotation) pair once, shuffled into single-pass batches of
/// `batch` rotated tiles. Throws NonFiniteError if the loss diverges.
std::vector<PretextEpochReport> train_pretext(PretextModel<float>& model, const std::vector<ct::Volume<float>>& tiles,
                                              const PretextConfig& config,
                                              const std::function<void(const PretextEpochReport&)>& on_epoch = {});

/// Fraction of the 4 * tiles.size() rotated copies whose rotation is predicted correctly (eval mode).
double pretext_accuracy(PretextModel<float>& model, const std::vector<ct::Volume<float>>& tiles);

/// Keeps only the backbone tensors. Every tensor a backbone of `config` expects must be present
/// with the right shape, otherwise CheckpointError.
Checkpoint export_backbone(const Checkpoint& checkpoint, const BackboneConfig& config);

}  // namespace ndk::pretext
