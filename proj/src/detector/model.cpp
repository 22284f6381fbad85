#include "ndk/detector/model.hpp"

#include <cmath>
#include <stdexcept>

namespace ndk::det {

BackboneConfig BackboneConfig::scaled(double multiplier) const {
  if (multiplier <= 0) throw std::invalid_argument("width multiplier must be positive");
  BackboneConfig out = *this;
  for (auto& w : out.widths) w = std::max<Index>(1, static_cast<Index>(std::lround(static_cast<double>(w) * multiplier)));
  return out;
}

std::array<Index, 5> BackboneConfig::stage_extents() const {
  return {input_extent, input_extent / 2, input_extent / 4, input_extent / 8, input_extent / 16};
}

DetectorConfig DetectorConfig::with_width(double multiplier) {
  DetectorConfig c;
  c.backbone = c.backbone.scaled(multiplier);
  c.pyramid_channels = std::max<Index>(1, static_cast<Index>(std::lround(64.0 * multiplier)));
  return c;
}

Index DetectorConfig::slots() const {
  Index s = 0;
  for (const auto& l : levels) s = std::max<Index>(s, static_cast<Index>(l.sizes.size()));
  return s;
}

void DetectorConfig::validate() const {
  if (levels.size() != 4) throw std::invalid_argument("detector expects four pyramid levels (P2..P5)");
  const auto ext = backbone.stage_extents();
  if (backbone.input_extent % 16 != 0) throw std::invalid_argument("input extent must be a multiple of 16");
  if (tile != backbone.input_extent) throw std::invalid_argument("tile must equal the backbone input extent");
  for (std::size_t i = 0; i < 4; ++i) {
    if (levels[i].extent != ext[i + 1]) {
      throw std::invalid_argument("anchor level P" + std::to_string(i + 2) + " extent " +
                                  std::to_string(levels[i].extent) + " differs from C" + std::to_string(i + 2) +
                                  " extent " + std::to_string(ext[i + 1]));
    }
    if (levels[i].sizes.empty()) throw std::invalid_argument("every level needs at least one anchor size");
  }
  if (!(negative_iou < positive_iou)) throw std::invalid_argument("negative IoU must be below positive IoU");
  if (prior <= 0 || prior >= 1) throw std::invalid_argument("prior must lie in (0, 1)");
  if (overlap < 0 || overlap >= tile) throw std::invalid_argument("overlap must lie in [0, tile)");
  if (backbone.blocks_per_stage < 1) throw std::invalid_argument("blocks_per_stage must be positive");
}

namespace {

const ConvParams kSame3{Extent3::cube(1), Extent3::cube(1)};

}  // namespace

template <typename Scalar>
BasicBlock<Scalar>::BasicBlock(const std::string& name, Index in, Index out, Index stride, std::mt19937_64& rng)
    : conv1(name + ".conv1", in, out, Extent3::cube(3), {Extent3::cube(stride), Extent3::cube(1)}, rng, false),
      conv2(name + ".conv2", out, out, Extent3::cube(3), kSame3, rng, false),
      bn1(name + ".bn1", out),
      bn2(name + ".bn2", out),
      has_shortcut(stride != 1 || in != out) {
  if (has_shortcut) {
    shortcut = Conv3d<Scalar>(name + ".shortcut", in, out, Extent3::cube(1), {Extent3::cube(stride), Extent3::cube(0)},
                              rng, false);
    shortcut_bn = BatchNorm<Scalar>(name + ".shortcut_bn", out);
  }
}

template <typename Scalar>
Var<Scalar> BasicBlock<Scalar>::operator()(const Var<Scalar>& x, bool training) {
  Var<Scalar> h = ag::relu(bn1(conv1(x), training));
  h = bn2(conv2(h), training);
  const Var<Scalar> skip = has_shortcut ? shortcut_bn(shortcut(x), training) : x;
  return ag::relu(ag::add(h, skip));
}

template <typename Scalar>
void BasicBlock<Scalar>::collect(StateCollector<Scalar>& out) {
  conv1.collect(out);
  bn1.collect(out);
  conv2.collect(out);
  bn2.collect(out);
  if (has_shortcut) {
    shortcut.collect(out);
    shortcut_bn.collect(out);
  }
}

template <typename Scalar>
Backbone<Scalar>::Backbone(const BackboneConfig& config, std::mt19937_64& rng, const std::string& prefix)
    : config_(config),
      stem_(prefix + ".c1.conv", 1, config.widths[0], Extent3::cube(3), kSame3, rng, false),
      stem_bn_(prefix + ".c1.bn", config.widths[0]) {
  if (config.input_extent % 16 != 0) throw std::invalid_argument("backbone input extent must be a multiple of 16");
  for (int s = 1; s < 5; ++s) {
    std::vector<BasicBlock<Scalar>> blocks;
    for (int b = 0; b < config.blocks_per_stage; ++b) {
      const std::string name = prefix + ".c" + std::to_string(s + 1) + "." + std::to_string(b);
      blocks.emplace_back(name, b == 0 ? config.widths[s - 1] : config.widths[s], config.widths[s], b == 0 ? 2 : 1,
                          rng);
    }
    stages_.push_back(std::move(blocks));
  }
}

template <typename Scalar>
std::array<Var<Scalar>, 5> Backbone<Scalar>::operator()(const Var<Scalar>& x, bool training) {
  const Shape& s = x.shape();
  if (s.size() != 5 || s[1] != 1 || s[2] != config_.input_extent || s[3] != config_.input_extent ||
      s[4] != config_.input_extent) {
    throw std::invalid_argument("backbone expects [N,1," + std::to_string(config_.input_extent) + "^3] input, got " +
                                shape_str(s));
  }
  std::array<Var<Scalar>, 5> c;
  c[0] = ag::relu(stem_bn_(stem_(ag::scale(x, config_.input_scale)), training));
  for (std::size_t st = 0; st < stages_.size(); ++st) {
    Var<Scalar> h = c[st];
    for (auto& block : stages_[st]) h = block(h, training);
    c[st + 1] = h;
  }
  return c;
}

template <typename Scalar>
void Backbone<Scalar>::collect(StateCollector<Scalar>& out) {
  stem_.collect(out);
  stem_bn_.collect(out);
  for (auto& stage : stages_)
    for (auto& block : stage) block.collect(out);
}

template <typename Scalar>
Pyramid<Scalar>::Pyramid(const std::array<Index, 5>& widths, Index channels, bool dense, std::mt19937_64& rng)
    : dense_fusion(dense) {
  for (int i = 0; i < 5; ++i) {
    // C1 only feeds P2 through the pooled lower-level term.
    if (i == 0 && !dense) continue;
    lateral_[static_cast<std::size_t>(i)] = Conv3d<Scalar>("fpn.lateral" + std::to_string(i + 1), widths[static_cast<std::size_t>(i)],
                                                           channels, Extent3::cube(1), {}, rng);
  }
  for (int i = 0; i < 3; ++i) {
    up_[static_cast<std::size_t>(i)] = Deconv3d<Scalar>("fpn.up" + std::to_string(i + 2), channels, channels,
                                                         Extent3::cube(2), {Extent3::cube(2), Extent3::cube(0)}, rng);
  }
}

template <typename Scalar>
std::array<Var<Scalar>, 4> Pyramid<Scalar>::operator()(const std::array<Var<Scalar>, 5>& c) const {
  std::array<Var<Scalar>, 5> lat;
  for (std::size_t i = dense_fusion ? 0 : 1; i < 5; ++i) lat[i] = lateral_[i](c[i]);
  auto pool = [](const Var<Scalar>& v) { return ag::maxpool3d(v, Extent3::cube(2), Extent3::cube(2)); };
  auto check = [](const Var<Scalar>& a, const Var<Scalar>& b, int level) {
    if (a.shape() != b.shape()) {
      throw std::invalid_argument("P" + std::to_string(level) + " fusion extent mismatch: " + shape_str(a.shape()) +
                                  " vs " + shape_str(b.shape()));
    }
  };
  std::array<Var<Scalar>, 4> p;
  // Index k of `p` is level P(k+2), fed by C(k+2) = c[k+1].
  for (int k = 3; k >= 0; --k) {
    const std::size_t ci = static_cast<std::size_t>(k + 1);
    Var<Scalar> acc = lat[ci];
    if (k < 3) {
      const Var<Scalar> up = up_[static_cast<std::size_t>(k)](p[static_cast<std::size_t>(k + 1)]);
      check(acc, up, k + 2);
      acc = ag::add(acc, up);
    }
    if (dense_fusion) {
      const Var<Scalar> down = pool(lat[ci - 1]);
      check(acc, down, k + 2);
      acc = ag::add(acc, down);
    }
    p[static_cast<std::size_t>(k)] = acc;
  }
  return p;
}

template <typename Scalar>
void Pyramid<Scalar>::collect(StateCollector<Scalar>& out) {
  for (auto& l : lateral_) {
    if (l.weight.value.defined()) l.collect(out);
  }
  for (auto& u : up_) u.collect(out);
}

template <typename Scalar>
Head<Scalar>::Head(Index channels, Index slots, double prior, std::mt19937_64& rng)
    : conv_("head.conv", channels, channels, Extent3::cube(3), kSame3, rng),
      cls_("head.cls", channels, slots, Extent3::cube(1), {}, rng),
      reg_("head.reg", channels, 4 * slots, Extent3::cube(1), {}, rng) {
  // Near-zero output weights so every anchor starts at the prior and offsets start at zero.
  std::normal_distribution<double> small(0.0, 0.01);
  for (Conv3d<Scalar>* c : {&cls_, &reg_}) {
    for (Scalar& w : c->weight.value.mutable_value().values()) w = static_cast<Scalar>(small(rng));
  }
  cls_.bias.value.mutable_value().fill(static_cast<Scalar>(-std::log((1.0 - prior) / prior)));
}

template <typename Scalar>
LevelOutput<Scalar> Head<Scalar>::operator()(const Var<Scalar>& p) const {
  const Var<Scalar> h = ag::relu(conv_(p));
  return {cls_(h), reg_(h)};
}

template <typename Scalar>
void Head<Scalar>::collect(StateCollector<Scalar>& out) {
  conv_.collect(out);
  cls_.collect(out);
  reg_.collect(out);
}

template <typename Scalar>
Detector<Scalar>::Detector(const DetectorConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  backbone_ = Backbone<Scalar>(config.backbone, rng);
  pyramid_ = Pyramid<Scalar>(config.backbone.widths, config.pyramid_channels, config.dense_fusion, rng);
  head_ = Head<Scalar>(config.pyramid_channels, config.slots(), config.prior, rng);
}

template <typename Scalar>
std::vector<LevelOutput<Scalar>> Detector<Scalar>::operator()(const Var<Scalar>& x, bool training) {
  const auto p = pyramid_(backbone_(x, training));
  std::vector<LevelOutput<Scalar>> out;
  for (const auto& level : p) out.push_back(head_(level));
  return out;
}

template <typename Scalar>
void Detector<Scalar>::collect(StateCollector<Scalar>& out) {
  backbone_.collect(out);
  pyramid_.collect(out);
  head_.collect(out);
}

template class BasicBlock<float>;
template class BasicBlock<double>;
template class Backbone<float>;
template class Backbone<double>;
template class Pyramid<float>;
template class Pyramid<double>;
template class Head<float>;
template class Head<double>;
template class Detector<float>;
template class Detector<double>;

}  // namespace ndk::det
