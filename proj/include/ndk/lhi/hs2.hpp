#pragma once

#include "ndk/checkpoint.hpp"
#include "ndk/ct/phantom.hpp"
#include "ndk/layers.hpp"
#include "ndk/lhi/lhi.hpp"
#include "ndk/optim.hpp"

#include <functional>
#include <random>
#include <vector>

namespace ndk::lhi {

/// Two 3x3 conv + ReLU + 2x2 max-pool stages (1 -> 30 -> 50 channels), then fully connected
/// layers flatten -> 2048 -> 1024 -> 512 -> 2. Class 1 is "nodule".
template <typename Scalar>
class Hs2Net : public Module<Scalar> {
 public:
  explicit Hs2Net(std::uint64_t seed, Index input_side = 48);

  /// [N, 1, 1, S, S] -> logits [N, 2].
  Var<Scalar> operator()(const Var<Scalar>& x) const;
  void collect(StateCollector<Scalar>& out) override;

  Index input_side() const { return side_; }
  /// Width of the flattened conv output feeding the first fully connected layer.
  Index flat_features() const;

 private:
  Index side_;
  Conv3d<Scalar> conv1_, conv2_;
  Linear<Scalar> fc1_, fc2_, fc3_, fc4_;
};

struct Hs2Sample {
  Image input;  // network input, values in [0, 1]
  int label = 0;  // 1 nodule, 0 tissue
};

struct Hs2Config {
  int epochs = 2000;
  int batch = 32;  // half from each class
  SgdConfig sgd{0.01, 0.9, 5e-4};
  int step_every = 500;  // lr multiplied by gamma every this many epochs
  double gamma = 0.1;
  double clip_norm = 5.0;  // <= 0 disables
  bool augment = true;     // random flip / quarter turn of each drawn image
  std::uint64_t seed = 0;
};

struct Hs2EpochReport {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  double accuracy = 0.0;  // on the balanced batches of the epoch
};

/// One of the 8 symmetries of the square: `code` bit 0 transposes, bit 1 flips rows, bit 2 flips columns.
Image dihedral(const Image& image, int code);

/// Stacks equally sized images into a [n, 1, 1, S, S] tensor.
Tensor<float> pack_inputs(const std::vector<Image>& inputs);

/// Class-balanced mini-batches (the smaller class is cycled); one epoch draws about as many samples
/// as the set holds. Throws std::invalid_argument when only one class is present and NonFiniteError on divergence.
std::vector<Hs2EpochReport> train_hs2(Hs2Net<float>& model, const std::vector<Hs2Sample>& samples,
                                      const Hs2Config& config,
                                      const std::function<void(const Hs2EpochReport&)>& on_epoch = {});

/// Nodule probability per input (eval mode, no tape).
std::vector<double> nodule_probability(const Hs2Net<float>& model, const std::vector<Image>& inputs);

/// Drops candidates whose nodule probability is below `min_probability`; survivors keep their
/// coordinates and get score * probability. Never adds candidates.
std::vector<ct::Candidate> filter_candidates(const std::vector<ct::Candidate>& candidates, const ct::Volume<float>& volume,
                                             const Hs2Net<float>& model, const LhiParams& params,
                                             double min_probability = 0.5);

/// Same, loading the network from a checkpoint (strict).
std::vector<ct::Candidate> filter_candidates(const std::vector<ct::Candidate>& candidates, const ct::Volume<float>& volume,
                                             const Checkpoint& checkpoint, const LhiParams& params,
                                             double min_probability = 0.5);

/// Candidates with known labels from a phantom: every nodule (label 1) and `tissue_count` points on
/// vessel centrelines away from nodules (label 0), diameters drawn from the nodule range.
std::vector<std::pair<ct::Candidate, int>> phantom_candidates(const ct::Phantom& phantom, const ct::PhantomConfig& config,
                                                              int tissue_count, std::mt19937_64& rng);

}  // namespace ndk::lhi
