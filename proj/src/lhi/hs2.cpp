#include "ndk/lhi/hs2.hpp"

#include "ndk/ct/preprocess.hpp"
#include "ndk/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ndk::lhi {

namespace {

const ConvParams kSamePlane{Extent3::cube(1), {0, 1, 1}};
constexpr Extent3 kPool{1, 2, 2};

}  // namespace

template <typename Scalar>
Hs2Net<Scalar>::Hs2Net(std::uint64_t seed, Index input_side) : side_(input_side) {
  if (input_side < 4 || input_side % 4 != 0) throw std::invalid_argument("HS2 input side must be a positive multiple of 4");
  std::mt19937_64 rng(seed);
  conv1_ = Conv3d<Scalar>("hs2.conv1", 1, 30, {1, 3, 3}, kSamePlane, rng);
  conv2_ = Conv3d<Scalar>("hs2.conv2", 30, 50, {1, 3, 3}, kSamePlane, rng);
  fc1_ = Linear<Scalar>("hs2.fc1", flat_features(), 2048, rng);
  fc2_ = Linear<Scalar>("hs2.fc2", 2048, 1024, rng);
  fc3_ = Linear<Scalar>("hs2.fc3", 1024, 512, rng);
  fc4_ = Linear<Scalar>("hs2.fc4", 512, 2, rng);
}

template <typename Scalar>
Index Hs2Net<Scalar>::flat_features() const {
  return 50 * (side_ / 4) * (side_ / 4);
}

template <typename Scalar>
Var<Scalar> Hs2Net<Scalar>::operator()(const Var<Scalar>& x) const {
  const Shape& s = x.shape();
  if (s.size() != 5 || s[1] != 1 || s[2] != 1 || s[3] != side_ || s[4] != side_) {
    throw std::invalid_argument("HS2 expects [N,1,1," + std::to_string(side_) + "," + std::to_string(side_) +
                                "] input, got " + shape_str(s));
  }
  Var<Scalar> h = ag::maxpool3d(ag::relu(conv1_(x)), kPool, kPool);
  h = ag::maxpool3d(ag::relu(conv2_(h)), kPool, kPool);
  h = ag::reshape(h, {s[0], flat_features()});
  h = ag::relu(fc1_(h));
  h = ag::relu(fc2_(h));
  h = ag::relu(fc3_(h));
  return fc4_(h);
}

template <typename Scalar>
void Hs2Net<Scalar>::collect(StateCollector<Scalar>& out) {
  for (auto* c : {&conv1_, &conv2_}) c->collect(out);
  for (auto* f : {&fc1_, &fc2_, &fc3_, &fc4_}) f->collect(out);
}

template class Hs2Net<float>;
template class Hs2Net<double>;

Tensor<float> pack_inputs(const std::vector<Image>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("pack_inputs: no images");
  const Index r = inputs[0].rows(), c = inputs[0].cols();
  Tensor<float> t({static_cast<Index>(inputs.size()), 1, 1, r, c});
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].rows() != r || inputs[i].cols() != c) throw std::invalid_argument("pack_inputs: image extents differ");
    std::copy(inputs[i].data(), inputs[i].data() + r * c, t.data() + static_cast<Index>(i) * r * c);
  }
  return t;
}

Image dihedral(const Image& image, int code) {
  Image out = code & 1 ? Image(image.transpose()) : image;
  if (code & 2) out = out.colwise().reverse().eval();
  if (code & 4) out = out.rowwise().reverse().eval();
  return out;
}

std::vector<Hs2EpochReport> train_hs2(Hs2Net<float>& model, const std::vector<Hs2Sample>& samples,
                                      const Hs2Config& config,
                                      const std::function<void(const Hs2EpochReport&)>& on_epoch) {
  if (config.batch < 2 || config.batch % 2 != 0) throw std::invalid_argument("HS2 batch must be a positive even number");
  std::array<std::vector<std::size_t>, 2> pools;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int l = samples[i].label;
    if (l != 0 && l != 1) throw std::invalid_argument("HS2 labels must be 0 or 1, got " + std::to_string(l));
    pools[static_cast<std::size_t>(l)].push_back(i);
  }
  if (pools[0].empty() || pools[1].empty()) {
    throw std::invalid_argument("HS2 training needs both classes (tissue: " + std::to_string(pools[0].size()) +
                                ", nodule: " + std::to_string(pools[1].size()) + ")");
  }
  const LrSchedule schedule{config.sgd.lr, {}, config.gamma, config.step_every};
  std::mt19937_64 rng(config.seed);
  auto params = model.parameters();
  model.zero_grad();
  std::array<std::size_t, 2> cursor{0, 0};
  for (auto& p : pools) std::shuffle(p.begin(), p.end(), rng);
  auto draw = [&](std::size_t cls) {
    auto& pool = pools[cls];
    if (cursor[cls] == pool.size()) {
      std::shuffle(pool.begin(), pool.end(), rng);
      cursor[cls] = 0;
    }
    return pool[cursor[cls]++];
  };

  std::uniform_int_distribution<int> symmetry(0, 7);
  const std::size_t half = static_cast<std::size_t>(config.batch / 2);
  const std::size_t batches = std::max<std::size_t>(1, (samples.size() + static_cast<std::size_t>(config.batch) - 1) /
                                                          static_cast<std::size_t>(config.batch));
  std::vector<Hs2EpochReport> reports;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    SgdConfig sgd = config.sgd;
    sgd.lr = schedule.at(epoch);
    Hs2EpochReport rep{epoch, sgd.lr, 0.0, 0.0};
    std::size_t correct = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<Image> inputs;
      std::vector<int> labels;
      for (std::size_t i = 0; i < 2 * half; ++i) {
        const std::size_t cls = i % 2;
        const Image& image = samples[draw(cls)].input;
        inputs.push_back(config.augment ? dihedral(image, symmetry(rng)) : image);
        labels.push_back(static_cast<int>(cls));
      }
      const Var<float> logits = model(Var<float>(pack_inputs(inputs)));
      const Var<float> loss = ag::softmax_cross_entropy(logits, labels);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) throw NonFiniteError("HS2 training diverged at epoch " + std::to_string(epoch));
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool nodule = logits.value()[static_cast<Index>(2 * i + 1)] > logits.value()[static_cast<Index>(2 * i)];
        correct += (nodule ? 1 : 0) == labels[i] ? 1 : 0;
      }
      backward(loss);
      if (config.clip_norm > 0) clip_grad_norm<float>(params, config.clip_norm);
      sgd_step<float>(params, sgd);
      rep.mean_loss += value;
    }
    rep.mean_loss /= static_cast<double>(batches);
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(batches * 2 * half);
    reports.push_back(rep);
    if (on_epoch) on_epoch(rep);
  }
  return reports;
}

std::vector<double> nodule_probability(const Hs2Net<float>& model, const std::vector<Image>& inputs) {
  NoGradGuard guard;
  std::vector<double> out;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < inputs.size(); start += kChunk) {
    const std::vector<Image> chunk(inputs.begin() + static_cast<std::ptrdiff_t>(start),
                                   inputs.begin() + static_cast<std::ptrdiff_t>(std::min(inputs.size(), start + kChunk)));
    const Tensor<float> logits = model(Var<float>(pack_inputs(chunk))).value();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      out.push_back(sigmoid(static_cast<double>(logits[static_cast<Index>(2 * i + 1)]) -
                            static_cast<double>(logits[static_cast<Index>(2 * i)])));
    }
  }
  return out;
}

std::vector<ct::Candidate> filter_candidates(const std::vector<ct::Candidate>& candidates, const ct::Volume<float>& volume,
                                             const Hs2Net<float>& model, const LhiParams& params,
                                             double min_probability) {
  if (candidates.empty()) return {};
  std::vector<Image> inputs;
  inputs.reserve(candidates.size());
  for (const auto& c : candidates) inputs.push_back(candidate_input(volume, c, params));
  const std::vector<double> p = nodule_probability(model, inputs);
  std::vector<ct::Candidate> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (p[i] < min_probability) continue;
    ct::Candidate c = candidates[i];
    c.score *= p[i];
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<ct::Candidate> filter_candidates(const std::vector<ct::Candidate>& candidates, const ct::Volume<float>& volume,
                                             const Checkpoint& checkpoint, const LhiParams& params,
                                             double min_probability) {
  Hs2Net<float> model(0);
  load_state_dict(model, checkpoint, LoadMode::Strict);
  return filter_candidates(candidates, volume, model, params, min_probability);
}

std::vector<std::pair<ct::Candidate, int>> phantom_candidates(const ct::Phantom& phantom, const ct::PhantomConfig& config,
                                                              int tissue_count, std::mt19937_64& rng) {
  std::vector<std::pair<ct::Candidate, int>> out;
  const std::string& id = phantom.volume.series_id;
  for (const auto& n : phantom.nodules) out.push_back({{id, n.center, n.diameter, 1.0}, 1});

  std::vector<const ct::Vec3*> points;
  for (const auto& v : phantom.vessels) {
    for (const auto& p : v.centerline) {
      bool clear = ct::inside_grid(ct::world_to_voxel(p, phantom.volume.gray), phantom.volume.gray);
      for (const auto& n : phantom.nodules) clear = clear && (p - n.center).norm() > n.diameter;
      if (clear) points.push_back(&p);
    }
  }
  if (points.empty()) return out;
  std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
  std::uniform_real_distribution<double> diameter(config.diameter_min, config.diameter_max);
  for (int i = 0; i < tissue_count; ++i) out.push_back({{id, *points[pick(rng)], diameter(rng), 1.0}, 0});
  return out;
}

}  // namespace ndk::lhi
