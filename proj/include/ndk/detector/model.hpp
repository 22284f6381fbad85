#pragma once

#include "ndk/detector/anchors.hpp"
#include "ndk/layers.hpp"

#include <array>
#include <random>
#include <string>
#include <vector>

namespace ndk::det {

/// ResNet-18-style 3-D backbone. C1 keeps the input extent; C2..C5 each halve it.
struct BackboneConfig {
  std::array<Index, 5> widths{64, 64, 128, 256, 512};
  int blocks_per_stage = 2;
  Index input_extent = 96;
  double input_scale = 1.0 / 255.0;  // gray [0, 255] -> [0, 1] before the stem

  /// Widths multiplied by `multiplier` and rounded (at least 1 channel).
  BackboneConfig scaled(double multiplier) const;
  /// Expected C1..C5 spatial extents.
  std::array<Index, 5> stage_extents() const;
};

struct DetectorConfig {
  BackboneConfig backbone;
  Index pyramid_channels = 64;
  bool dense_fusion = true;  // false: classic top-down fusion only
  std::vector<AnchorLevel> levels = default_anchor_levels();
  double prior = 0.01;  // initial foreground probability of every anchor

  double positive_iou = 0.4;
  double negative_iou = 0.02;
  int negative_ratio = 3;
  int min_negatives = 16;

  double score_threshold = 0.1;
  double nms_iou = 0.1;
  int pre_nms_top_k = 2000;
  Index tile = 96;
  Index overlap = 32;

  /// Full-width layout with backbone, pyramid and head channels multiplied by `multiplier`.
  static DetectorConfig with_width(double multiplier);

  /// Number of head slots (the largest anchor count of any level).
  Index slots() const;
  /// Throws std::invalid_argument on inconsistent geometry.
  void validate() const;
};

template <typename Scalar>
class BasicBlock : public Module<Scalar> {
 public:
  BasicBlock() = default;
  BasicBlock(const std::string& name, Index in, Index out, Index stride, std::mt19937_64& rng);

  Var<Scalar> operator()(const Var<Scalar>& x, bool training);
  void collect(StateCollector<Scalar>& out) override;

  Conv3d<Scalar> conv1, conv2, shortcut;
  BatchNorm<Scalar> bn1, bn2, shortcut_bn;
  bool has_shortcut = false;
};

template <typename Scalar>
class Backbone : public Module<Scalar> {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, std::mt19937_64& rng, const std::string& prefix = "backbone");

  /// C1..C5 for a [N, 1, E, E, E] input with E == input_extent.
  std::array<Var<Scalar>, 5> operator()(const Var<Scalar>& x, bool training);
  void collect(StateCollector<Scalar>& out) override;

  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  Conv3d<Scalar> stem_;
  BatchNorm<Scalar> stem_bn_;
  std::vector<std::vector<BasicBlock<Scalar>>> stages_;
};

/// P2..P5. Pi = lateral(Ci) + up(P(i+1)) + pool(lateral(C(i-1))), neighbours omitted at the ends.
template <typename Scalar>
class Pyramid : public Module<Scalar> {
 public:
  Pyramid() = default;
  Pyramid(const std::array<Index, 5>& widths, Index channels, bool dense_fusion, std::mt19937_64& rng);

  std::array<Var<Scalar>, 4> operator()(const std::array<Var<Scalar>, 5>& c) const;
  void collect(StateCollector<Scalar>& out) override;

  bool dense_fusion = true;

 private:
  std::array<Conv3d<Scalar>, 5> lateral_;
  std::array<Deconv3d<Scalar>, 3> up_;  // up_[i] lifts P(i+3) onto P(i+2)
};

/// Raw head outputs of one level: logits [N, A, E, E, E] and offsets [N, 4A, E, E, E].
template <typename Scalar>
struct LevelOutput {
  Var<Scalar> cls;
  Var<Scalar> reg;
};

/// Shared 3x3x3 conv + ReLU, then sibling 1x1x1 convs for scores and offsets.
template <typename Scalar>
class Head : public Module<Scalar> {
 public:
  Head() = default;
  Head(Index channels, Index slots, double prior, std::mt19937_64& rng);

  LevelOutput<Scalar> operator()(const Var<Scalar>& p) const;
  void collect(StateCollector<Scalar>& out) override;

 private:
  Conv3d<Scalar> conv_, cls_, reg_;
};

template <typename Scalar>
class Detector : public Module<Scalar> {
 public:
  Detector() = default;
  Detector(const DetectorConfig& config, std::uint64_t seed);

  std::vector<LevelOutput<Scalar>> operator()(const Var<Scalar>& x, bool training);
  void collect(StateCollector<Scalar>& out) override;

  const DetectorConfig& config() const { return config_; }
  Backbone<Scalar>& backbone() { return backbone_; }
  Pyramid<Scalar>& pyramid() { return pyramid_; }

 private:
  DetectorConfig config_;
  Backbone<Scalar> backbone_;
  Pyramid<Scalar> pyramid_;
  Head<Scalar> head_;
};

}  // namespace ndk::det
