#include "ndk/detector/targets.hpp"

#include "ndk/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ndk::det {

TargetAssignment assign_targets(const AnchorGrid& grid, const std::vector<Cube>& truths, double positive_iou,
                                double negative_iou) {
  TargetAssignment out;
  out.labels.assign(static_cast<std::size_t>(grid.size()), AnchorLabel::Negative);
  out.matched.assign(static_cast<std::size_t>(grid.size()), -1);
  std::vector<double> best(static_cast<std::size_t>(grid.size()), 0.0);

  for (std::size_t t = 0; t < truths.size(); ++t) {
    const Cube& truth = truths[t];
    for (std::size_t li = 0; li < grid.levels().size(); ++li) {
      const AnchorLevel& l = grid.levels()[li];
      const double half = (static_cast<double>(l.stride) - 1.0) / 2.0;
      for (std::size_t s = 0; s < l.sizes.size(); ++s) {
        const double a = l.sizes[s];
        // Cells whose anchor cube can intersect the truth cube at all.
        const double reach = (a + truth.side) / 2.0;
        Index lo[3], hi[3];
        for (int k = 0; k < 3; ++k) {
          lo[k] = std::max<Index>(0, static_cast<Index>(std::floor((truth.center[k] - reach - half) / l.stride)));
          hi[k] = std::min<Index>(l.extent - 1, static_cast<Index>(std::ceil((truth.center[k] + reach - half) / l.stride)));
        }
        for (Index z = lo[2]; z <= hi[2]; ++z)
          for (Index y = lo[1]; y <= hi[1]; ++y)
            for (Index x = lo[0]; x <= hi[0]; ++x) {
              const Cube anchor{Vec3(x * l.stride + half, y * l.stride + half, z * l.stride + half), a};
              const double iou = iou3d(anchor, truth);
              if (iou < negative_iou) continue;
              const auto idx = static_cast<std::size_t>(grid.index(static_cast<int>(li), static_cast<int>(s), z, y, x));
              if (iou > best[idx]) {
                best[idx] = iou;
                if (iou > positive_iou) out.matched[idx] = static_cast<int>(t);
              }
            }
      }
    }
  }
  for (std::size_t i = 0; i < best.size(); ++i) {
    if (best[i] > positive_iou) {
      out.labels[i] = AnchorLabel::Positive;
      ++out.positives;
    } else if (best[i] >= negative_iou) {
      out.labels[i] = AnchorLabel::Ignore;
      out.matched[i] = -1;
    } else {
      ++out.negatives;
    }
  }
  return out;
}

std::vector<AnchorSample> select_samples(const AnchorGrid& grid, const TargetAssignment& assignment,
                                         const std::vector<Cube>& truths, const std::vector<float>& logits,
                                         int negative_ratio, int min_negatives) {
  if (logits.size() != assignment.labels.size()) throw std::invalid_argument("select_samples: logit count mismatch");
  std::vector<AnchorSample> out;
  std::vector<Index> negatives;
  for (std::size_t i = 0; i < assignment.labels.size(); ++i) {
    if (assignment.labels[i] == AnchorLabel::Positive) {
      const Index a = static_cast<Index>(i);
      out.push_back({a, true, encode_offsets(truths[static_cast<std::size_t>(assignment.matched[i])], grid.cube(a))});
    } else if (assignment.labels[i] == AnchorLabel::Negative) {
      negatives.push_back(static_cast<Index>(i));
    }
  }
  const auto want = static_cast<std::size_t>(
      std::max<Index>(static_cast<Index>(negative_ratio) * static_cast<Index>(out.size()), min_negatives));
  const std::size_t take = std::min(want, negatives.size());
  auto harder = [&](Index a, Index b) {
    const float la = logits[static_cast<std::size_t>(a)], lb = logits[static_cast<std::size_t>(b)];
    return la != lb ? la > lb : a < b;
  };
  std::partial_sort(negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(take), negatives.end(), harder);
  for (std::size_t i = 0; i < take; ++i) out.push_back({negatives[i], false, {}});
  return out;
}

template <typename Scalar>
std::vector<float> flat_logits(const std::vector<LevelOutput<Scalar>>& outputs, const AnchorGrid& grid, Index n) {
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(grid.size()));
  for (std::size_t li = 0; li < grid.levels().size(); ++li) {
    const AnchorLevel& l = grid.levels()[li];
    const Tensor<Scalar>& cls = outputs[li].cls.value();
    const Index cells = l.extent * l.extent * l.extent;
    const Scalar* base = cls.data() + n * cls.dim(1) * cells;
    for (Index i = 0; i < static_cast<Index>(l.sizes.size()) * cells; ++i) out.push_back(static_cast<float>(base[i]));
  }
  return out;
}

template <typename Scalar>
Var<Scalar> detection_loss(const std::vector<LevelOutput<Scalar>>& outputs, const AnchorGrid& grid,
                           const std::vector<AnchorSample>& samples, LossTerms* terms, Index n) {
  if (samples.empty()) throw DegenerateBatchError("detection loss: no positive or negative anchors in the batch");
  if (outputs.size() != grid.levels().size()) throw std::invalid_argument("detection loss: level count mismatch");

  struct Ref {
    std::size_t level;
    Index cls_offset;  // into the level's cls tensor
    Index reg_offset;  // of the dx channel; channels are cells apart
    Index cells;
  };
  auto ref = [&](Index anchor) {
    const AnchorLocation loc = grid.locate(anchor);
    const auto li = static_cast<std::size_t>(loc.level);
    const Index e = grid.levels()[li].extent;
    const Index cells = e * e * e;
    const Tensor<Scalar>& cls = outputs[li].cls.value();
    const Tensor<Scalar>& reg = outputs[li].reg.value();
    return Ref{li, (n * cls.dim(1) + loc.slot) * cells + loc.cell, (n * reg.dim(1) + 4 * loc.slot) * cells + loc.cell,
               cells};
  };

  const Index positives = std::count_if(samples.begin(), samples.end(), [](const auto& s) { return s.positive; });
  const double m = static_cast<double>(samples.size());
  double cls_loss = 0.0, reg_loss = 0.0;
  // Per-sample derivative of the total loss with respect to the logit and the 4 offsets.
  std::vector<double> d_logit(samples.size());
  std::vector<std::array<double, 4>> d_reg(samples.size(), {0, 0, 0, 0});
  std::vector<Ref> refs;
  refs.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Ref r = ref(samples[i].anchor);
    refs.push_back(r);
    const double z = static_cast<double>(outputs[r.level].cls.value()[r.cls_offset]);
    const double y = samples[i].positive ? 1.0 : 0.0;
    // Stable log(1 + exp(-|z|)) form of BCE with logits.
    cls_loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    d_logit[i] = (sigmoid(z) - y) / m;
    if (samples[i].positive) {
      const Tensor<Scalar>& reg = outputs[r.level].reg.value();
      for (int k = 0; k < 4; ++k) {
        const double diff = static_cast<double>(reg[r.reg_offset + k * r.cells]) - samples[i].target[static_cast<std::size_t>(k)];
        const double ad = std::abs(diff);
        reg_loss += ad < 1.0 ? 0.5 * diff * diff : ad - 0.5;
        d_reg[i][static_cast<std::size_t>(k)] = (ad < 1.0 ? diff : (diff > 0 ? 1.0 : -1.0)) / static_cast<double>(positives);
      }
    }
  }
  cls_loss /= m;
  if (positives > 0) reg_loss /= static_cast<double>(positives);

  LossTerms t{cls_loss, reg_loss, cls_loss + reg_loss, positives, static_cast<Index>(samples.size()) - positives};
  if (!std::isfinite(t.total)) throw NonFiniteError("detection loss is not finite");
  if (terms) *terms = t;

  std::vector<Var<Scalar>> parents;
  for (const auto& o : outputs) {
    parents.push_back(o.cls);
    parents.push_back(o.reg);
  }
  auto backward = [refs = std::move(refs), d_logit = std::move(d_logit), d_reg = std::move(d_reg),
                   flags = std::vector<bool>([&] {
                     std::vector<bool> f;
                     for (const auto& s : samples) f.push_back(s.positive);
                     return f;
                   }())](typename Var<Scalar>::Node& node) {
    const double g = static_cast<double>(node.grad[0]);
    std::vector<Tensor<Scalar>> grads;
    for (const auto& p : node.parents) grads.emplace_back(p->value.shape());
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const Ref& r = refs[i];
      grads[2 * r.level][r.cls_offset] += static_cast<Scalar>(g * d_logit[i]);
      if (flags[i]) {
        for (int k = 0; k < 4; ++k) {
          grads[2 * r.level + 1][r.reg_offset + k * r.cells] += static_cast<Scalar>(g * d_reg[i][static_cast<std::size_t>(k)]);
        }
      }
    }
    for (std::size_t p = 0; p < node.parents.size(); ++p) {
      if (node.parents[p]->requires_grad) node.parents[p]->accumulate(std::move(grads[p]));
    }
  };
  return Var<Scalar>::make(Tensor<Scalar>({1}, static_cast<Scalar>(t.total)), parents, std::move(backward));
}

template std::vector<float> flat_logits(const std::vector<LevelOutput<float>>&, const AnchorGrid&, Index);
template std::vector<float> flat_logits(const std::vector<LevelOutput<double>>&, const AnchorGrid&, Index);
template Var<float> detection_loss(const std::vector<LevelOutput<float>>&, const AnchorGrid&,
                                   const std::vector<AnchorSample>&, LossTerms*, Index);
template Var<double> detection_loss(const std::vector<LevelOutput<double>>&, const AnchorGrid&,
                                    const std::vector<AnchorSample>&, LossTerms*, Index);

}  // namespace ndk::det
