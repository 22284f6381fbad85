#include "ndk/pretext/pretext.hpp"

#include "ndk/ct/preprocess.hpp"
#include "ndk/ct/phantom.hpp"

#include <cmath>
#include <numeric>

namespace ndk::pretext {

template <typename T>
ct::Volume<T> rotate_volume(const ct::Volume<T>& volume, int k) {
  if (k < 0 || k > 3) throw std::invalid_argument("rotation index must lie in [0, 3], got " + std::to_string(k));
  const ct::Index3 e = volume.extent;
  if (e.y != e.x) throw std::invalid_argument("rotation needs square slices, got " + ct::to_string(e));
  ct::Volume<T> out = volume;
  if (k == 0) return out;
  const Index n = e.x;
  for (Index z = 0; z < e.z; ++z)
    for (Index y = 0; y < n; ++y)
      for (Index x = 0; x < n; ++x) {
        T v;
        if (k == 1) {
          v = volume.at(z, n - 1 - x, y);
        } else if (k == 2) {
          v = volume.at(z, n - 1 - y, n - 1 - x);
        } else {
          v = volume.at(z, x, n - 1 - y);
        }
        out.at(z, y, x) = v;
      }
  if (k % 2 == 1) std::swap(out.spacing.x(), out.spacing.y());
  return out;
}

template ct::Volume<float> rotate_volume(const ct::Volume<float>&, int);
template ct::Volume<std::uint8_t> rotate_volume(const ct::Volume<std::uint8_t>&, int);
template ct::Volume<std::int16_t> rotate_volume(const ct::Volume<std::int16_t>&, int);

template <typename Scalar>
PretextModel<Scalar>::PretextModel(const BackboneConfig& backbone, Index hidden, Index classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  backbone_ = det::Backbone<Scalar>(backbone, rng);
  fc1_ = Linear<Scalar>("pretext.fc1", backbone.widths[4], hidden, rng);
  fc2_ = Linear<Scalar>("pretext.fc2", hidden, classes, rng);
}

template <typename Scalar>
Var<Scalar> PretextModel<Scalar>::operator()(const Var<Scalar>& x, bool training) {
  const auto c = backbone_(x, training);
  return fc2_(ag::relu(fc1_(ag::global_avg_pool(c[4]))));
}

template <typename Scalar>
void PretextModel<Scalar>::collect(StateCollector<Scalar>& out) {
  backbone_.collect(out);
  fc1_.collect(out);
  fc2_.collect(out);
}

template class PretextModel<float>;
template class PretextModel<double>;

template <typename Scalar>
Var<Scalar> pretext_loss(const Var<Scalar>& logits, const std::vector<int>& labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[1] != 4) throw std::invalid_argument("pretext loss expects [N, 4] logits, got " + shape_str(s));
  if (static_cast<Index>(labels.size()) != s[0]) throw std::invalid_argument("pretext loss: label count mismatch");
  for (int l : labels) {
    if (l < 0 || l > 3) throw std::invalid_argument("rotation label out of range: " + std::to_string(l));
  }
  return ag::softmax_cross_entropy(logits, labels);
}

template Var<float> pretext_loss(const Var<float>&, const std::vector<int>&);
template Var<double> pretext_loss(const Var<double>&, const std::vector<int>&);

void PretextConfig::validate() const {
  if (classes != 4) throw std::invalid_argument("pretext task uses 4 rotation classes, got " + std::to_string(classes));
  if (batch < 2) throw std::invalid_argument("pretext batch must hold at least 2 rotated tiles");
  if (epochs < 1) throw std::invalid_argument("pretext epochs must be positive");
  if (hidden < 1) throw std::invalid_argument("pretext hidden width must be positive");
}

std::vector<ct::Volume<float>> sample_pretext_tiles(const ct::NormalizedVolume& volume, int count, Index extent,
                                                    std::mt19937_64& rng) {
  const ct::Volume<float> gray = ct::masked_gray(volume);
  std::vector<Index> inside;
  if (volume.mask) {
    for (std::size_t i = 0; i < volume.mask->voxels.size(); ++i) {
      if (volume.mask->voxels[i]) inside.push_back(static_cast<Index>(i));
    }
    if (inside.empty()) throw std::invalid_argument("lung mask of " + volume.series_id + " is empty");
  }
  const ct::Index3 e = gray.extent;
  std::vector<ct::Volume<float>> out;
  for (int i = 0; i < count; ++i) {
    Index flat;
    if (inside.empty()) {
      flat = std::uniform_int_distribution<Index>(0, e.volume() - 1)(rng);
    } else {
      flat = inside[std::uniform_int_distribution<std::size_t>(0, inside.size() - 1)(rng)];
    }
    const Index z = flat / (e.y * e.x), y = (flat / e.x) % e.y, x = flat % e.x;
    // Keep the crop inside the volume where it fits.
    auto start = [&](Index c, Index n) { return n >= extent ? std::clamp<Index>(c - extent / 2, 0, n - extent) : c - extent / 2; };
    out.push_back(ct::crop(gray, {start(z, e.z), start(y, e.y), start(x, e.x)}, {extent, extent, extent}));
  }
  return out;
}

namespace {

Tensor<float> rotation_batch(const ct::Volume<float>& tile) {
  const Index e = tile.extent.x, n = tile.extent.volume();
  if (tile.extent.z != e || tile.extent.y != e) throw std::invalid_argument("pretext tiles must be cubes");
  Tensor<float> out({4, 1, e, e, e});
  for (int k = 0; k < 4; ++k) {
    const ct::Volume<float> r = rotate_volume(tile, k);
    std::copy(r.voxels.begin(), r.voxels.end(), out.data() + k * n);
  }
  return out;
}

int argmax_row(const Tensor<float>& logits, Index row) {
  const Index c = logits.dim(1);
  int best = 0;
  for (Index j = 1; j < c; ++j) {
    if (logits[row * c + j] > logits[row * c + best]) best = static_cast<int>(j);
  }
  return best;
}

}  // namespace

std::vector<PretextEpochReport> train_pretext(PretextModel<float>& model, const std::vector<ct::Volume<float>>& tiles,
                                              const PretextConfig& config,
                                              const std::function<void(const PretextEpochReport&)>& on_epoch) {
  config.validate();
  if (tiles.empty()) throw std::invalid_argument("train_pretext: no tiles");
  const Index e = tiles[0].extent.x, n = tiles[0].extent.volume();
  for (const auto& t : tiles) {
    if (t.extent.x != e || t.extent.y != e || t.extent.z != e) throw std::invalid_argument("pretext tiles must be equal cubes");
  }
  const LrSchedule schedule{config.sgd.lr, config.milestones, config.gamma, 0};
  std::mt19937_64 rng(config.seed);
  auto params = model.parameters();
  model.zero_grad();

  // Every (tile, rotation) pair once per epoch, shuffled across batches so batch statistics
  // never see all rotations of one tile together.
  std::vector<std::pair<std::size_t, int>> pairs;
  for (std::size_t i = 0; i < tiles.size(); ++i)
    for (int k = 0; k < 4; ++k) pairs.push_back({i, k});
  const auto batch = static_cast<std::size_t>(config.batch);
  std::vector<PretextEpochReport> reports;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    SgdConfig sgd = config.sgd;
    sgd.lr = schedule.at(epoch);
    PretextEpochReport rep{epoch, sgd.lr, 0.0, 0.0};
    int correct = 0, steps = 0;
    // A trailing batch of one would leave batch norm without a spread; it joins the previous batch.
    for (std::size_t start = 0; start < pairs.size();) {
      std::size_t end = std::min(pairs.size(), start + batch);
      if (pairs.size() - end == 1) ++end;
      Tensor<float> input({static_cast<Index>(end - start), 1, e, e, e});
      std::vector<int> labels;
      for (std::size_t j = start; j < end; ++j) {
        const ct::Volume<float> r = rotate_volume(tiles[pairs[j].first], pairs[j].second);
        std::copy(r.voxels.begin(), r.voxels.end(), input.data() + static_cast<Index>(j - start) * n);
        labels.push_back(pairs[j].second);
      }
      const Var<float> logits = model(Var<float>(std::move(input)), true);
      const Var<float> loss = pretext_loss(logits, labels);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw NonFiniteError("pretext training diverged at epoch " + std::to_string(epoch) + " (lr " +
                             std::to_string(sgd.lr) + ")");
      }
      for (std::size_t j = 0; j < labels.size(); ++j) {
        correct += argmax_row(logits.value(), static_cast<Index>(j)) == labels[j] ? 1 : 0;
      }
      rep.mean_loss += value;
      ++steps;
      backward(loss);
      if (config.clip_norm > 0) clip_grad_norm<float>(params, config.clip_norm);
      sgd_step<float>(params, sgd);
      start = end;
    }
    rep.mean_loss /= steps;
    rep.accuracy = correct / static_cast<double>(pairs.size());
    reports.push_back(rep);
    if (on_epoch) on_epoch(rep);
  }
  return reports;
}

double pretext_accuracy(PretextModel<float>& model, const std::vector<ct::Volume<float>>& tiles) {
  if (tiles.empty()) return 0.0;
  NoGradGuard guard;
  int correct = 0;
  for (const auto& t : tiles) {
    const Var<float> logits = model(Var<float>(rotation_batch(t)), false);
    for (int k = 0; k < 4; ++k) correct += argmax_row(logits.value(), k) == k ? 1 : 0;
  }
  return correct / (4.0 * static_cast<double>(tiles.size()));
}

Checkpoint export_backbone(const Checkpoint& checkpoint, const BackboneConfig& config) {
  std::mt19937_64 rng(0);
  det::Backbone<float> reference(config, rng);
  const Checkpoint expected = state_dict(reference);
  Checkpoint out;
  for (const auto& [name, tensor] : expected.entries()) {
    if (!checkpoint.contains(name)) throw CheckpointError("checkpoint has no backbone tensor '" + name + "'");
    const Tensor<float>& t = checkpoint.get(name);
    if (t.shape() != tensor.shape()) {
      throw CheckpointError("backbone tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                            shape_str(tensor.shape()));
    }
    out.add(name, t);
  }
  return out;
}

}  // namespace ndk::pretext
