#pragma once

#include "ndk/ct/records.hpp"
#include "ndk/ct/volume.hpp"
#include "ndk/detector/targets.hpp"
#include "ndk/optim.hpp"

#include <functional>
#include <random>
#include <vector>

namespace ndk::det {

/// A 1 mm gray volume (mask already applied) and its nodules in world mm.
struct DetectorSample {
  ct::Volume<float> volume;
  std::vector<ct::NoduleAnnotation> nodules;
};

struct DetectorTrainConfig {
  int epochs = 20;
  int accumulate = 4;  // tiles per optimizer step
  SgdConfig sgd{0.01, 0.9, 5e-4};
  std::vector<int> milestones;  // epochs at which lr is multiplied by gamma
  double gamma = 0.1;
  double clip_norm = 5.0;  // global gradient norm limit per step; <= 0 disables
  bool augment = true;  // random placement inside the tile plus axis flips
  std::uint64_t seed = 0;
};

struct EpochReport {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  double mean_classification = 0.0;
  double mean_regression = 0.0;
  Index positives = 0;
};

/// A training tile cut from a sample, with its truth cubes in tile voxel coordinates.
struct TrainingTile {
  Tensor<float> input;  // [1, 1, T, T, T]
  std::vector<Cube> truths;
};

/// Places (or crops) the sample inside a T^3 tile. With augmentation the placement is random and
/// each axis may be mirrored; without it the volume sits at the tile origin (or the crop starts at 0).
TrainingTile make_training_tile(const DetectorSample& sample, Index tile, bool augment, std::mt19937_64& rng);

/// SGD over `samples`, one tile per sample per epoch, in a seeded shuffled order. Throws NonFiniteError
/// if the loss diverges.
std::vector<EpochReport> train_detector(Detector<float>& model, const std::vector<DetectorSample>& samples,
                                        const DetectorTrainConfig& config,
                                        const std::function<void(const EpochReport&)>& on_epoch = {});

}  // namespace ndk::det
