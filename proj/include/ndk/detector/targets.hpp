#pragma once

#include "ndk/detector/model.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace ndk::det {

enum class AnchorLabel : std::int8_t { Ignore = -1, Negative = 0, Positive = 1 };

struct TargetAssignment {
  std::vector<AnchorLabel> labels;  // one per anchor
  std::vector<int> matched;         // best annotation for positives, -1 otherwise
  Index positives = 0;
  Index negatives = 0;
};

/// Positive iff the best IoU with any truth cube exceeds `positive_iou`, negative iff every IoU is
/// below `negative_iou`, ignored otherwise. Truth cubes are in tile voxel coordinates.
TargetAssignment assign_targets(const AnchorGrid& grid, const std::vector<Cube>& truths, double positive_iou,
                                double negative_iou);

/// One anchor that contributes to the loss.
struct AnchorSample {
  Index anchor = 0;
  bool positive = false;
  Offsets target{};  // meaningful for positives only
};

/// All positives plus the highest-scoring negatives: max(ratio * positives, min_negatives) of them.
/// `logits` is the flat per-anchor score in grid order. Ties go to the lower anchor index.
std::vector<AnchorSample> select_samples(const AnchorGrid& grid, const TargetAssignment& assignment,
                                         const std::vector<Cube>& truths, const std::vector<float>& logits,
                                         int negative_ratio, int min_negatives);

/// Flattens the per-level score maps of sample `n` into grid order.
template <typename Scalar>
std::vector<float> flat_logits(const std::vector<LevelOutput<Scalar>>& outputs, const AnchorGrid& grid, Index n = 0);

class DegenerateBatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossTerms {
  double classification = 0.0;  // mean BCE over the sampled anchors
  double regression = 0.0;      // smooth-L1 summed over the 4 offsets, averaged over positives
  double total = 0.0;           // classification + regression
  Index positives = 0;
  Index negatives = 0;
};

/// Detection loss for sample `n` of the batch as a node on the tape. Throws DegenerateBatchError when
/// `samples` is empty.
template <typename Scalar>
Var<Scalar> detection_loss(const std::vector<LevelOutput<Scalar>>& outputs, const AnchorGrid& grid,
                           const std::vector<AnchorSample>& samples, LossTerms* terms = nullptr, Index n = 0);

}  // namespace ndk::det
