#include "ndk/detector/train.hpp"

#include "ndk/ct/preprocess.hpp"

#include <cmath>
#include <numeric>

namespace ndk::det {

namespace {

Index pick(Index lo, Index hi, std::mt19937_64& rng) {
  return lo >= hi ? lo : std::uniform_int_distribution<Index>(lo, hi)(rng);
}

void flip_axis(Tensor<float>& t, Index tile, int axis) {
  float* d = t.data();
  for (Index z = 0; z < tile; ++z)
    for (Index y = 0; y < tile; ++y)
      for (Index x = 0; x < tile; ++x) {
        Index zz = z, yy = y, xx = x;
        if (axis == 0) xx = tile - 1 - x;
        if (axis == 1) yy = tile - 1 - y;
        if (axis == 2) zz = tile - 1 - z;
        const Index a = (z * tile + y) * tile + x, b = (zz * tile + yy) * tile + xx;
        if (a < b) std::swap(d[a], d[b]);
      }
}

}  // namespace

TrainingTile make_training_tile(const DetectorSample& sample, Index tile, bool augment, std::mt19937_64& rng) {
  const ct::Volume<float>& v = sample.volume;
  const ct::Index3 e = v.extent;
  std::vector<ct::Vec3> centers;
  for (const auto& n : sample.nodules) centers.push_back(ct::world_to_voxel(n.center, v));

  // Per axis (x, y, z): start of the crop in volume voxels; negative means leading zero padding.
  const Index ext[3] = {e.x, e.y, e.z};
  Index start[3] = {0, 0, 0};
  if (augment) {
    const ct::Vec3* focus = centers.empty() ? nullptr : &centers[std::uniform_int_distribution<std::size_t>(0, centers.size() - 1)(rng)];
    for (int k = 0; k < 3; ++k) {
      Index lo = std::min<Index>(0, ext[k] - tile), hi = std::max<Index>(0, ext[k] - tile);
      if (focus && ext[k] > tile) {
        const Index margin = tile / 6;
        lo = std::max(lo, static_cast<Index>(std::ceil((*focus)[k] + margin - tile)));
        hi = std::min(hi, static_cast<Index>(std::floor((*focus)[k] - margin)));
        if (lo > hi) lo = hi = std::clamp<Index>(static_cast<Index>((*focus)[k]) - tile / 2, 0, ext[k] - tile);
      }
      start[k] = pick(lo, hi, rng);
    }
  }
  TrainingTile out;
  out.input = ct::to_tensor(ct::crop(v, {start[2], start[1], start[0]}, {tile, tile, tile}));
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const ct::Vec3 c = centers[i] - ct::Vec3(start[0], start[1], start[2]);
    out.truths.push_back({c, sample.nodules[i].diameter / v.spacing.x()});
  }
  if (augment) {
    for (int axis = 0; axis < 3; ++axis) {
      if (std::bernoulli_distribution(0.5)(rng)) {
        flip_axis(out.input, tile, axis);
        for (auto& t : out.truths) t.center[axis] = static_cast<double>(tile - 1) - t.center[axis];
      }
    }
  }
  return out;
}

std::vector<EpochReport> train_detector(Detector<float>& model, const std::vector<DetectorSample>& samples,
                                        const DetectorTrainConfig& config,
                                        const std::function<void(const EpochReport&)>& on_epoch) {
  if (samples.empty()) throw std::invalid_argument("train_detector: no samples");
  if (config.accumulate < 1) throw std::invalid_argument("train_detector: accumulate must be positive");
  const DetectorConfig& dc = model.config();
  const AnchorGrid grid(dc.levels);
  const LrSchedule schedule{config.sgd.lr, config.milestones, config.gamma, 0};
  std::mt19937_64 rng(config.seed);
  auto params = model.parameters();
  model.zero_grad();

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochReport> reports;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    SgdConfig sgd = config.sgd;
    sgd.lr = schedule.at(epoch);
    EpochReport rep;
    rep.epoch = epoch;
    rep.lr = sgd.lr;
    int pending = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const TrainingTile tile = make_training_tile(samples[order[i]], dc.tile, config.augment, rng);
      const auto outputs = model(Var<float>(tile.input), true);
      const TargetAssignment assignment = assign_targets(grid, tile.truths, dc.positive_iou, dc.negative_iou);
      const auto chosen = select_samples(grid, assignment, tile.truths, flat_logits(outputs, grid), dc.negative_ratio,
                                         dc.min_negatives);
      LossTerms terms;
      Var<float> loss = detection_loss(outputs, grid, chosen, &terms);
      if (!std::isfinite(terms.total)) {
        throw NonFiniteError("detector training diverged at epoch " + std::to_string(epoch) + ", sample " +
                             std::to_string(order[i]));
      }
      // Average the accumulated gradient over the tiles of one step.
      loss = ag::weighted_sum(loss, Tensor<float>({1}, 1.0f / static_cast<float>(config.accumulate)));
      backward(loss);
      rep.mean_loss += terms.total;
      rep.mean_classification += terms.classification;
      rep.mean_regression += terms.regression;
      rep.positives += terms.positives;
      if (++pending == config.accumulate || i + 1 == order.size()) {
        if (config.clip_norm > 0) clip_grad_norm<float>(params, config.clip_norm);
        sgd_step<float>(params, sgd);
        pending = 0;
      }
    }
    const double n = static_cast<double>(samples.size());
    rep.mean_loss /= n;
    rep.mean_classification /= n;
    rep.mean_regression /= n;
    reports.push_back(rep);
    if (on_epoch) on_epoch(rep);
  }
  return reports;
}

}  // namespace ndk::det
