#include <doctest.h>

#include "ndk/ct/phantom.hpp"
#include "ndk/pretext/pretext.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace ndk;
using namespace ndk::pretext;

namespace {

ct::Volume<float> cube_volume(Index n, Index depth = -1) {
  ct::Volume<float> v;
  v.extent = {depth < 0 ? n : depth, n, n};
  v.voxels.assign(static_cast<std::size_t>(v.extent.volume()), 0.f);
  return v;
}

ct::Volume<float> random_volume(Index n, std::mt19937_64& rng, Index depth = -1) {
  ct::Volume<float> v = cube_volume(n, depth);
  std::uniform_real_distribution<float> u(0.f, 255.f);
  for (float& x : v.voxels) x = u(rng);
  return v;
}

// Toy tiles whose rotation is visible: a bright bar from the centre toward +x plus noise.
std::vector<ct::Volume<float>> toy_tiles(int count, Index n, std::mt19937_64& rng) {
  std::vector<ct::Volume<float>> out;
  std::normal_distribution<float> noise(0.f, 10.f);
  std::uniform_int_distribution<Index> shift(-2, 2);
  for (int i = 0; i < count; ++i) {
    ct::Volume<float> v = cube_volume(n);
    const Index cy = n / 2 + shift(rng), cz = n / 2 + shift(rng);
    for (Index z = 0; z < n; ++z)
      for (Index y = 0; y < n; ++y)
        for (Index x = 0; x < n; ++x) {
          const bool bar = std::abs(y - cy) <= 1 && std::abs(z - cz) <= 2 && x >= n / 2;
          v.at(z, y, x) = 60.f + (bar ? 150.f : 0.f) + noise(rng);
        }
    out.push_back(std::move(v));
  }
  return out;
}

BackboneConfig tiny_backbone(Index extent) {
  BackboneConfig b;
  b.widths = {4, 4, 4, 8, 8};
  b.blocks_per_stage = 1;
  b.input_extent = extent;
  return b;
}

Tensor<float> stack_rotations(const ct::Volume<float>& v) {
  const Index n = v.extent.volume();
  Tensor<float> t({4, 1, v.extent.z, v.extent.y, v.extent.x});
  for (int k = 0; k < 4; ++k) {
    const auto r = rotate_volume(v, k);
    std::copy(r.voxels.begin(), r.voxels.end(), t.data() + k * n);
  }
  return t;
}

}  // namespace

TEST_CASE("rotate_volume: 2x2 example and identity") {
  ct::Volume<float> v = cube_volume(2, 1);
  // Rows are y, columns x: [[a, b], [c, d]] with a=1, b=2, c=3, d=4.
  v.at(0, 0, 0) = 1;
  v.at(0, 0, 1) = 2;
  v.at(0, 1, 0) = 3;
  v.at(0, 1, 1) = 4;
  const auto r = rotate_volume(v, 1);
  CHECK(r.at(0, 0, 0) == 3);
  CHECK(r.at(0, 0, 1) == 1);
  CHECK(r.at(0, 1, 0) == 4);
  CHECK(r.at(0, 1, 1) == 2);
  CHECK(rotate_volume(v, 0).voxels == v.voxels);
}

TEST_CASE("rotate_volume: matches a rotation-matrix mapping of centred coordinates") {
  std::mt19937_64 rng(1);
  for (Index n : {5, 6}) {
    const auto v = random_volume(n, rng, 3);
    for (int k = 0; k < 4; ++k) {
      const auto r = rotate_volume(v, k);
      // Output (u, w) reads the source at M^k (u, w) with M = [[0, 1], [-1, 0]], centred on the slice.
      const double c = (static_cast<double>(n) - 1.0) / 2.0;
      for (Index z = 0; z < 3; ++z)
        for (Index y = 0; y < n; ++y)
          for (Index x = 0; x < n; ++x) {
            double u = static_cast<double>(x) - c, w = static_cast<double>(y) - c;
            for (int i = 0; i < k; ++i) {
              const double nu = w, nw = -u;
              u = nu;
              w = nw;
            }
            const auto sx = static_cast<Index>(std::lround(u + c)), sy = static_cast<Index>(std::lround(w + c));
            REQUIRE(r.at(z, y, x) == v.at(z, sy, sx));
          }
    }
  }
}

TEST_CASE("rotate_volume: cyclic group of order 4, bijection, errors") {
  std::mt19937_64 rng(2);
  const auto v = random_volume(7, rng, 4);
  for (int j = 0; j < 4; ++j)
    for (int k = 0; k < 4; ++k) CHECK(rotate_volume(rotate_volume(v, j), k).voxels == rotate_volume(v, (j + k) % 4).voxels);
  auto r = v;
  for (int i = 0; i < 4; ++i) r = rotate_volume(r, 1);
  CHECK(r.voxels == v.voxels);
  auto a = rotate_volume(v, 3).voxels, b = v.voxels;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);

  ct::Volume<float> slab;
  slab.extent = {2, 3, 4};
  slab.voxels.assign(24, 0.f);
  CHECK_THROWS_AS(rotate_volume(slab, 1), std::invalid_argument);
  CHECK_THROWS_AS(rotate_volume(v, 4), std::invalid_argument);
  CHECK_THROWS_AS(rotate_volume(v, -1), std::invalid_argument);
}

TEST_CASE("pretext_loss: closed forms and rejection of other class counts") {
  const Var<double> uniform(Tensor<double>({2, 4}));
  CHECK(pretext_loss(uniform, {0, 3}).value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  Tensor<double> sure({1, 4}, -50.0);
  sure[2] = 50.0;
  CHECK(pretext_loss(Var<double>(sure), {2}).value()[0] < 1e-12);
  CHECK_THROWS_AS(pretext_loss(Var<double>(Tensor<double>({2, 3})), {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(pretext_loss(uniform, {0, 4}), std::invalid_argument);
  CHECK_THROWS_AS(pretext_loss(uniform, {0}), std::invalid_argument);

  PretextConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.classes = 8;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.classes = 4;
  cfg.batch = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("pretext config defaults carry the published schedule") {
  const PretextConfig cfg;
  CHECK(cfg.sgd.lr == 0.1);
  CHECK(cfg.sgd.weight_decay == 5e-4);
  CHECK(cfg.milestones == std::vector<int>{70, 85});
  CHECK(cfg.gamma == 0.5);
  CHECK(cfg.epochs == 100);
  CHECK(cfg.batch == 16);
  CHECK(cfg.hidden == 256);
  const LrSchedule s{cfg.sgd.lr, cfg.milestones, cfg.gamma, 0};
  CHECK(s.at(69) == 0.1);
  CHECK(s.at(70) == 0.05);
  CHECK(s.at(85) == 0.025);
}

TEST_CASE("pretext model: names, output shape, relabeling invariance") {
  PretextModel<float> model(tiny_backbone(16), 16, 4, 3);
  bool fc = false;
  for (auto* p : model.parameters()) {
    const bool backbone = p->name.rfind("backbone.", 0) == 0, head = p->name.rfind("pretext.fc", 0) == 0;
    CHECK((backbone || head));
    fc |= head;
  }
  CHECK(fc);

  std::mt19937_64 rng(4);
  const auto v = random_volume(16, rng);
  const std::vector<int> direct{0, 1, 2, 3};
  const Var<float> base = model(Var<float>(stack_rotations(v)), false);
  CHECK(base.shape() == Shape{4, 4});
  const double l0 = pretext_loss(base, direct).value()[0];
  for (int j = 1; j < 4; ++j) {
    const Var<float> shifted = model(Var<float>(stack_rotations(rotate_volume(v, j))), false);
    std::vector<int> labels;
    for (int k = 0; k < 4; ++k) labels.push_back((k + j) % 4);
    CHECK(pretext_loss(shifted, labels).value()[0] == doctest::Approx(l0).epsilon(1e-5));
  }
}

TEST_CASE("train_pretext: loss falls on a toy set, deterministic, constant tiles stay at chance") {
  std::mt19937_64 rng(5);
  const auto tiles = toy_tiles(64, 16, rng);
  PretextConfig cfg;
  cfg.backbone = tiny_backbone(16);
  cfg.hidden = 16;
  cfg.epochs = 13;
  cfg.batch = 64;  // 256 rotated tiles: 4 steps per epoch, 52 steps
  cfg.sgd.lr = 0.05;
  cfg.milestones = {};
  cfg.seed = 6;

  PretextModel<float> a(cfg.backbone, cfg.hidden, 4, 7);
  const auto reports = train_pretext(a, tiles, cfg);
  REQUIRE(reports.size() == 13);
  for (const auto& r : reports) REQUIRE(std::isfinite(r.mean_loss));
  // Epoch means over a three-epoch window never rise.
  std::vector<double> smooth;
  for (std::size_t i = 0; i + 3 <= reports.size(); ++i) {
    smooth.push_back((reports[i].mean_loss + reports[i + 1].mean_loss + reports[i + 2].mean_loss) / 3.0);
  }
  for (std::size_t i = 1; i < smooth.size(); ++i) CHECK(smooth[i] <= smooth[i - 1] + 1e-3);
  CHECK(reports.back().mean_loss < 0.5 * reports.front().mean_loss);
  CHECK(pretext_accuracy(a, toy_tiles(16, 16, rng)) >= 0.9);

  PretextModel<float> b(cfg.backbone, cfg.hidden, 4, 7);
  cfg.epochs = 2;
  PretextModel<float> c(cfg.backbone, cfg.hidden, 4, 7);
  train_pretext(b, tiles, cfg);
  train_pretext(c, tiles, cfg);
  CHECK(state_dict(b) == state_dict(c));

  std::vector<ct::Volume<float>> flat(4, cube_volume(16));
  for (auto& t : flat) std::fill(t.voxels.begin(), t.voxels.end(), 77.f);
  CHECK(pretext_accuracy(a, flat) == 0.25);
  CHECK(pretext_accuracy(b, flat) == 0.25);
}

TEST_CASE("export_backbone: backbone only, bit-exact, loadable by the detector") {
  det::DetectorConfig dcfg;
  dcfg.backbone = tiny_backbone(32);
  dcfg.pyramid_channels = 4;
  dcfg.levels = det::default_anchor_levels(32);
  dcfg.tile = 32;
  dcfg.overlap = 8;

  PretextModel<float> model(tiny_backbone(16), 16, 4, 8);
  const Checkpoint full = state_dict(model);
  const Checkpoint exported = export_backbone(Checkpoint::deserialize(full.serialize()), dcfg.backbone);
  CHECK(exported.size() == full.filtered("backbone.").size());
  for (const auto& [name, t] : exported.entries()) {
    CHECK(name.rfind("pretext.", 0) != 0);
    CHECK(t.values().size() == full.get(name).values().size());
    CHECK(std::equal(t.values().begin(), t.values().end(), full.get(name).values().begin()));
  }

  det::Detector<float> detector(dcfg, 9);
  CHECK(load_state_dict(detector, exported, LoadMode::Partial) == exported.size());
  const Checkpoint after = state_dict(detector);
  for (const auto& [name, t] : exported.entries()) CHECK(after.get(name) == t);

  CHECK_THROWS_AS(export_backbone(full.filtered("pretext."), dcfg.backbone), CheckpointError);
  BackboneConfig wider = dcfg.backbone;
  wider.widths[4] = 16;
  CHECK_THROWS_AS(export_backbone(full, wider), CheckpointError);
}

TEST_CASE("sample_pretext_tiles: crops centred inside the lung mask") {
  ct::PhantomConfig pc;
  pc.extent = {48, 48, 48};
  pc.nodule_count = 1;
  pc.vessel_count = 1;
  pc.seed = 10;
  const ct::Phantom ph = ct::generate_phantom(pc, "p");
  std::mt19937_64 rng(11);
  const auto tiles = sample_pretext_tiles(ph.volume, 8, 32, rng);
  REQUIRE(tiles.size() == 8);
  for (const auto& t : tiles) {
    CHECK(t.extent == ct::Index3{32, 32, 32});
    CHECK(*std::max_element(t.voxels.begin(), t.voxels.end()) > 0.f);
  }
}
