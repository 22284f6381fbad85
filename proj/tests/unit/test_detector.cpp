#include <doctest.h>

#include "ndk/checkpoint.hpp"
#include "ndk/ct/preprocess.hpp"
#include "ndk/detector/inference.hpp"
#include "ndk/detector/targets.hpp"
#include "ndk/detector/train.hpp"
#include "ndk/gradcheck.hpp"

#include <cmath>
#include <random>

using namespace ndk;
using namespace ndk::det;

namespace {

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<Scalar> t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<Scalar>(n(rng));
  return t;
}

DetectorConfig tiny_config(Index extent, Index width) {
  DetectorConfig c;
  c.backbone.widths = {width, width, width, width, width};
  c.backbone.blocks_per_stage = 1;
  c.backbone.input_extent = extent;
  c.pyramid_channels = width;
  c.levels = default_anchor_levels(extent);
  c.tile = extent;
  c.overlap = extent / 3;
  return c;
}

DetectorConfig desk_config() {
  DetectorConfig c = DetectorConfig::with_width(1.0 / 16.0);
  c.backbone.blocks_per_stage = 1;
  return c;
}

std::vector<ct::Candidate> brute_nms(std::vector<ct::Candidate> left, double thr) {
  std::vector<ct::Candidate> kept;
  while (!left.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < left.size(); ++i) {
      if (ranks_before(left[i], left[best])) best = i;
    }
    const ct::Candidate b = left[best];
    kept.push_back(b);
    std::vector<ct::Candidate> rest;
    for (std::size_t i = 0; i < left.size(); ++i) {
      if (i != best && iou3d({left[i].center, left[i].diameter}, {b.center, b.diameter}) <= thr) rest.push_back(left[i]);
    }
    left = std::move(rest);
  }
  return kept;
}

}  // namespace

TEST_CASE("backbone: stage extents and widths for a 96^3 tile") {
  const BackboneConfig full;
  CHECK(full.stage_extents() == std::array<Index, 5>{96, 48, 24, 12, 6});
  const BackboneConfig quarter = full.scaled(0.25);
  CHECK(quarter.widths == std::array<Index, 5>{16, 16, 32, 64, 128});
  CHECK(quarter.stage_extents() == full.stage_extents());

  BackboneConfig cfg = full.scaled(1.0 / 16.0);
  cfg.blocks_per_stage = 1;
  std::mt19937_64 rng(1);
  Backbone<float> net(cfg, rng);
  const auto c = net(Var<float>(random_tensor<float>({1, 1, 96, 96, 96}, rng)), false);
  for (int i = 0; i < 5; ++i) {
    const Index e = cfg.stage_extents()[static_cast<std::size_t>(i)];
    CHECK(c[static_cast<std::size_t>(i)].shape() == Shape{1, cfg.widths[static_cast<std::size_t>(i)], e, e, e});
    for (float v : c[static_cast<std::size_t>(i)].value().values()) REQUIRE(std::isfinite(v));
  }
  CHECK_THROWS_AS(net(Var<float>(Tensor<float>({1, 1, 64, 64, 64})), false), std::invalid_argument);
}

TEST_CASE("backbone: zero input stays finite") {
  BackboneConfig cfg = BackboneConfig{}.scaled(1.0 / 16.0);
  cfg.blocks_per_stage = 1;
  std::mt19937_64 rng(2);
  Backbone<float> net(cfg, rng);
  for (bool training : {false, true}) {
    const auto c = net(Var<float>(Tensor<float>({1, 1, 96, 96, 96})), training);
    for (const auto& level : c) {
      for (float v : level.value().values()) REQUIRE(std::isfinite(v));
    }
  }
}

TEST_CASE("pyramid: extents, zero propagation, and the lower-layer term") {
  const std::array<Index, 5> widths{3, 3, 4, 5, 6};
  const std::array<Index, 5> extents{32, 16, 8, 4, 2};
  std::mt19937_64 rng(3);
  Pyramid<double> pyr(widths, 4, true, rng);

  std::array<Var<double>, 5> zero, rnd;
  for (std::size_t i = 0; i < 5; ++i) {
    const Index e = extents[i];
    zero[i] = Var<double>(Tensor<double>({1, widths[i], e, e, e}));
    rnd[i] = Var<double>(random_tensor<double>({1, widths[i], e, e, e}, rng));
  }
  const auto pz = pyr(zero);
  for (std::size_t i = 0; i < 4; ++i) {
    const Index e = extents[i + 1];
    CHECK(pz[i].shape() == Shape{1, 4, e, e, e});
    CHECK(pz[i].value().array().abs().maxCoeff() == 0.0);
  }

  const auto dense = pyr(rnd);
  pyr.dense_fusion = false;
  const auto top_down = pyr(rnd);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(top_down[i].shape() == dense[i].shape());
    CHECK((dense[i].value().array() - top_down[i].value().array()).abs().maxCoeff() > 1e-3);
  }

  rnd[0] = Var<double>(Tensor<double>({1, 3, 30, 30, 30}));
  pyr.dense_fusion = true;
  CHECK_THROWS_AS(pyr(rnd), std::invalid_argument);
}

TEST_CASE("anchors: counts, order, and bounds") {
  const auto levels = default_anchor_levels();
  const auto anchors = generate_anchors(levels);
  // 2 * 48^3 + 2 * 24^3 + 2 * 12^3 + 6^3
  CHECK(anchor_count(levels) == 252504);
  CHECK(static_cast<Index>(anchors.size()) == 252504);
  CHECK(level_offsets(levels) == std::vector<Index>{0, 221184, 248832, 252288});
  CHECK(anchor_count({{6, 16, {30}}}) == 216);

  const AnchorGrid grid(levels);
  CHECK(grid.size() == 252504);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<Index> pick(0, grid.size() - 1);
  for (int trial = 0; trial < 2000; ++trial) {
    const Index i = trial < 4 ? level_offsets(levels)[static_cast<std::size_t>(trial)] : pick(rng);
    const Anchor& a = anchors[static_cast<std::size_t>(i)];
    const AnchorLocation loc = grid.locate(i);
    CHECK(loc.level == a.level);
    CHECK(loc.slot == a.slot);
    const Index e = levels[static_cast<std::size_t>(loc.level)].extent;
    const Index z = loc.cell / (e * e), y = (loc.cell / e) % e, x = loc.cell % e;
    CHECK(grid.index(loc.level, loc.slot, z, y, x) == i);
    CHECK(grid.cube(i).center.isApprox(a.cube.center));
    CHECK(grid.cube(i).side == a.cube.side);
  }
  for (const Anchor& a : anchors) {
    REQUIRE((a.cube.center.array() >= 0.0).all());
    REQUIRE((a.cube.center.array() < 96.0).all());
  }
}

TEST_CASE("iou3d: closed forms, symmetry, range") {
  const Cube a{Vec3(1, 2, 3), 2.0};
  CHECK(iou3d(a, a) == doctest::Approx(1.0));
  CHECK(iou3d(a, {Vec3(10, 2, 3), 2.0}) == 0.0);
  CHECK(iou3d(a, {Vec3(2, 2, 3), 2.0}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(iou3d({Vec3(0, 0, 0), 2.0}, {Vec3(0, 0, 0), 4.0}) == doctest::Approx(8.0 / 64.0));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-5, 5), s(0.5, 6);
  for (int i = 0; i < 500; ++i) {
    const Cube p{Vec3(u(rng), u(rng), u(rng)), s(rng)}, q{Vec3(u(rng), u(rng), u(rng)), s(rng)};
    const double v = iou3d(p, q);
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
    REQUIRE(v == doctest::Approx(iou3d(q, p)).epsilon(1e-14));
  }
}

TEST_CASE("offsets: formula and inverse") {
  const Cube anchor{Vec3(0, 0, 0), 10.0};
  const Offsets o = encode_offsets({Vec3(5, 0, 0), 20.0}, anchor);
  CHECK(o[0] == doctest::Approx(0.5));
  CHECK(o[1] == 0.0);
  CHECK(o[2] == 0.0);
  CHECK(o[3] == doctest::Approx(std::log(2.0)));
  const Offsets zero = encode_offsets(anchor, anchor);
  for (double v : zero) CHECK(v == 0.0);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-50, 50), s(0.5, 40);
  for (int i = 0; i < 1000; ++i) {
    const Cube t{Vec3(u(rng), u(rng), u(rng)), s(rng)}, a{Vec3(u(rng), u(rng), u(rng)), s(rng)};
    const Cube back = decode_offsets(encode_offsets(t, a), a);
    REQUIRE((back.center - t.center).norm() < 1e-9);
    REQUIRE(std::abs(back.side - t.side) < 1e-9);
  }
  CHECK_THROWS_AS(encode_offsets({Vec3(0, 0, 0), 0.0}, anchor), std::invalid_argument);
  CHECK_THROWS_AS(encode_offsets(anchor, {Vec3(0, 0, 0), -1.0}), std::invalid_argument);
}

TEST_CASE("assign_targets: matches a brute-force labeling and partitions all anchors") {
  const auto levels = default_anchor_levels();
  const AnchorGrid grid(levels);
  const auto anchors = generate_anchors(levels);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pos(-3, 99), side(3, 30);
  for (int trial = 0; trial < 4; ++trial) {
    std::vector<Cube> truths;
    for (int k = 0; k < 1 + trial; ++k) truths.push_back({Vec3(pos(rng), pos(rng), pos(rng)), side(rng)});
    const TargetAssignment got = assign_targets(grid, truths, 0.4, 0.02);
    Index p = 0, n = 0, ign = 0;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      double best = 0.0;
      int arg = -1;
      for (std::size_t t = 0; t < truths.size(); ++t) {
        const double v = iou3d(anchors[i].cube, truths[t]);
        if (v > best) {
          best = v;
          arg = static_cast<int>(t);
        }
      }
      const AnchorLabel want = best > 0.4 ? AnchorLabel::Positive : best < 0.02 ? AnchorLabel::Negative : AnchorLabel::Ignore;
      REQUIRE(got.labels[i] == want);
      REQUIRE(got.matched[i] == (want == AnchorLabel::Positive ? arg : -1));
      (want == AnchorLabel::Positive ? p : want == AnchorLabel::Negative ? n : ign) += 1;
    }
    CHECK(got.positives == p);
    CHECK(got.negatives == n);
    CHECK(p + n + ign == grid.size());
  }
}

TEST_CASE("select_samples: every positive plus the hardest negatives") {
  const AnchorGrid grid(default_anchor_levels());
  const std::vector<Cube> truths{{Vec3(40, 40, 40), 12.0}};
  const TargetAssignment a = assign_targets(grid, truths, 0.4, 0.02);
  REQUIRE(a.positives > 0);
  std::mt19937_64 rng(8);
  std::normal_distribution<float> n(0.f, 1.f);
  std::vector<float> logits(static_cast<std::size_t>(grid.size()));
  for (float& v : logits) v = n(rng);

  const auto s = select_samples(grid, a, truths, logits, 3, 16);
  Index pos = 0;
  float weakest_chosen = 1e30f;
  std::vector<bool> chosen(logits.size(), false);
  for (const auto& x : s) {
    chosen[static_cast<std::size_t>(x.anchor)] = true;
    if (x.positive) {
      ++pos;
      const Cube back = decode_offsets(x.target, grid.cube(x.anchor));
      CHECK((back.center - truths[0].center).norm() < 1e-9);
    } else {
      REQUIRE(a.labels[static_cast<std::size_t>(x.anchor)] == AnchorLabel::Negative);
      weakest_chosen = std::min(weakest_chosen, logits[static_cast<std::size_t>(x.anchor)]);
    }
  }
  CHECK(pos == a.positives);
  CHECK(static_cast<Index>(s.size()) - pos == std::max<Index>(3 * pos, 16));
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (a.labels[i] == AnchorLabel::Negative && !chosen[i]) REQUIRE(logits[i] <= weakest_chosen);
  }

  const auto none = select_samples(grid, assign_targets(grid, {}, 0.4, 0.02), {}, logits, 3, 16);
  CHECK(none.size() == 16);
}

TEST_CASE("detection_loss: hand-computed three-anchor case") {
  const AnchorGrid grid({{2, 4, {4}}});
  Tensor<double> cls({1, 1, 2, 2, 2}), reg({1, 4, 2, 2, 2});
  cls[0] = 0.0;
  cls[3] = 2.0;
  cls[5] = -1.0;
  const double pred[4] = {0.1, 0.3, -0.5, 0.0};
  for (int k = 0; k < 4; ++k) reg[k * 8] = pred[k];
  const std::vector<LevelOutput<double>> out{{Var<double>(cls, true), Var<double>(reg, true)}};
  const std::vector<AnchorSample> samples{{0, true, {0.1, -0.2, 0.5, 2.0}}, {3, false, {}}, {5, false, {}}};

  LossTerms t;
  const Var<double> loss = detection_loss(out, grid, samples, &t);
  // smooth-L1 of (0, 0.5, -1, -2) = 0 + 0.125 + 0.5 + 1.5
  CHECK(t.regression == doctest::Approx(2.125).epsilon(1e-12));
  // (ln 2 + ln(1 + e^2) + ln(1 + e^-1)) / 3
  CHECK(t.classification == doctest::Approx(1.0444456263737136).epsilon(1e-9));
  CHECK(loss.value()[0] == doctest::Approx(3.1694456263737134).epsilon(1e-9));
  CHECK(t.positives == 1);
  CHECK(t.negatives == 2);

  backward(loss);
  CHECK(out[0].cls.grad()[3] == doctest::Approx((1.0 / (1.0 + std::exp(-2.0))) / 3.0));
  CHECK(out[0].cls.grad()[1] == 0.0);
  CHECK(out[0].reg.grad()[8] == doctest::Approx(0.5));
  CHECK(out[0].reg.grad()[24] == doctest::Approx(-1.0));

  const std::vector<AnchorSample> perfect{{0, true, {pred[0], pred[1], pred[2], pred[3]}}};
  detection_loss(out, grid, perfect, &t);
  CHECK(t.regression == 0.0);

  CHECK_THROWS_AS(detection_loss(out, grid, {}, nullptr), DegenerateBatchError);
  const TargetAssignment all_ignore{std::vector<AnchorLabel>(8, AnchorLabel::Ignore), std::vector<int>(8, -1), 0, 0};
  const auto none = select_samples(grid, all_ignore, {}, std::vector<float>(8, 0.f), 3, 16);
  CHECK_THROWS_AS(detection_loss(out, grid, none, nullptr), DegenerateBatchError);
}

TEST_CASE("detection_loss: gradient check across two levels") {
  const AnchorGrid grid({{2, 4, {4}}, {1, 8, {8, 6}}});
  std::mt19937_64 rng(9);
  const std::vector<Tensor<double>> leaves{random_tensor<double>({1, 1, 2, 2, 2}, rng), random_tensor<double>({1, 4, 2, 2, 2}, rng, 0.3),
                                           random_tensor<double>({1, 2, 1, 1, 1}, rng), random_tensor<double>({1, 8, 1, 1, 1}, rng, 0.3)};
  const std::vector<AnchorSample> samples{{1, true, {0.2, -0.1, 0.05, 0.3}}, {8, true, {-0.4, 0.1, 0.2, -0.2}},
                                          {9, false, {}}, {2, false, {}}, {6, false, {}}};
  const auto report = grad_check(
      [&](std::span<const Var<double>> v) {
        return detection_loss<double>({{v[0], v[1]}, {v[2], v[3]}}, grid, samples);
      },
      leaves, {.samples_per_leaf = 0});
  CHECK(report.checked == 8 + 32 + 2 + 8);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("detector: gradient check through backbone, pyramid and head") {
  const DetectorConfig cfg = tiny_config(16, 2);
  Detector<double> model(cfg, 10);
  std::mt19937_64 rng(11);
  const AnchorGrid grid(cfg.levels);
  std::vector<Tensor<double>> weights;
  for (const auto& l : cfg.levels) {
    weights.push_back(random_tensor<double>({1, cfg.slots(), l.extent, l.extent, l.extent}, rng));
    weights.push_back(random_tensor<double>({1, 4 * cfg.slots(), l.extent, l.extent, l.extent}, rng));
  }
  const auto report = grad_check(
      [&](std::span<const Var<double>> v) {
        const auto out = model(v[0], false);
        Var<double> total = ag::weighted_sum(out[0].cls, weights[0]);
        for (std::size_t i = 0; i < out.size(); ++i) {
          if (i > 0) total = ag::add(total, ag::weighted_sum(out[i].cls, weights[2 * i]));
          total = ag::add(total, ag::weighted_sum(out[i].reg, weights[2 * i + 1]));
        }
        return total;
      },
      {random_tensor<double>({1, 1, 16, 16, 16}, rng, 255.0)}, {.step = 255e-5, .samples_per_leaf = 48, .seed = 12});
  CHECK(report.checked == 48);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("detector: head outputs, prior bias, parameter names") {
  const DetectorConfig cfg = tiny_config(32, 4);
  Detector<float> model(cfg, 13);
  const auto out = model(Var<float>(Tensor<float>({1, 1, 32, 32, 32})), false);
  REQUIRE(out.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    const Index e = cfg.levels[i].extent;
    CHECK(out[i].cls.shape() == Shape{1, 2, e, e, e});
    CHECK(out[i].reg.shape() == Shape{1, 8, e, e, e});
    for (float v : out[i].cls.value().values()) REQUIRE(v == doctest::Approx(std::log(0.01 / 0.99)).epsilon(1e-5));
  }
  bool has_lateral1 = false, has_head = false;
  for (auto* p : model.parameters()) {
    has_lateral1 |= p->name.rfind("fpn.lateral1.", 0) == 0;
    has_head |= p->name.rfind("head.cls.", 0) == 0;
  }
  CHECK(has_lateral1);
  CHECK(has_head);

  DetectorConfig plain = cfg;
  plain.dense_fusion = false;
  Detector<float> top_down(plain, 13);
  for (auto* p : top_down.parameters()) CHECK(p->name.rfind("fpn.lateral1.", 0) != 0);
}

TEST_CASE("nms3d: trivial cases and agreement with brute force") {
  const ct::Candidate c{"s", Vec3(1, 2, 3), 5.0, 0.9};
  CHECK(nms3d({c, c}, 0.1).size() == 1);
  ct::Candidate far = c;
  far.center = Vec3(100, 2, 3);
  CHECK(nms3d({c, far}, 0.1).size() == 2);

  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0, 30), s(2, 12);
  std::uniform_int_distribution<int> q(0, 9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ct::Candidate> cands;
    for (int i = 0; i < 40; ++i) {
      // Coarse scores so equal-score tie-breaking is exercised.
      cands.push_back({"s", Vec3(u(rng), u(rng), u(rng)), s(rng), q(rng) / 10.0});
    }
    const double thr = trial % 2 ? 0.1 : 0.3;
    const auto got = nms3d(cands, thr);
    const auto want = brute_nms(cands, thr);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      REQUIRE(got[i].center == want[i].center);
      REQUIRE(got[i].score == want[i].score);
    }
  }
}

TEST_CASE("detect_volume: duplicate hits from overlapping tiles collapse to one") {
  const DetectorConfig cfg = DetectorConfig::with_width(1.0 / 16.0);
  const AnchorGrid grid(cfg.levels);
  // Fires the P3 slot-0 anchor covering the brightest voxel and regresses onto it.
  const TileScorer fake = [&](const Tensor<float>& tile) {
    TileScores s;
    for (const auto& l : cfg.levels) {
      s.cls.emplace_back(Shape{1, 2, l.extent, l.extent, l.extent}, -10.f);
      s.reg.emplace_back(Shape{1, 8, l.extent, l.extent, l.extent});
    }
    Index best = 0;
    for (Index i = 1; i < tile.numel(); ++i) {
      if (tile[i] > tile[best]) best = i;
    }
    if (tile[best] < 0.5f) return s;
    const Index v[3] = {best % 96, (best / 96) % 96, best / (96 * 96)};
    const Index cell = ((v[2] / 4) * 24 + v[1] / 4) * 24 + v[0] / 4;
    s.cls[1][cell] = 3.f;
    for (int k = 0; k < 3; ++k) {
      const double center = static_cast<double>(v[k] / 4 * 4) + 1.5;
      s.reg[1][k * 13824 + cell] = static_cast<float>((static_cast<double>(v[k]) - center) / 10.0);
    }
    s.reg[1][3 * 13824 + cell] = static_cast<float>(std::log(0.8));
    return s;
  };

  ct::NormalizedVolume vol;
  vol.series_id = "phantom";
  vol.gray.extent = {96, 96, 128};
  vol.gray.spacing = Vec3(1, 1, 1);
  vol.gray.origin = Vec3(-70, -60, -50);
  vol.gray.voxels.assign(static_cast<std::size_t>(vol.gray.extent.volume()), 0.f);
  CHECK(detect_volume(vol, fake, cfg).empty());

  vol.gray.at(50, 40, 70) = 1.f;
  REQUIRE(ct::extract_tiles(vol.gray, 96, 32).size() == 2);
  const auto hits = detect_volume(vol, fake, cfg);
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].series_id == "phantom");
  CHECK((hits[0].center - Vec3(0, -20, 0)).norm() < 1e-4);
  CHECK(hits[0].diameter == doctest::Approx(8.0).epsilon(1e-5));
  CHECK(hits[0].score == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))));
}

TEST_CASE("detect_scan: untrained model on an empty volume, checkpoint mismatch") {
  const DetectorConfig cfg = desk_config();
  Detector<float> model(cfg, 15);
  const Checkpoint ck = state_dict(model);
  ct::NormalizedVolume vol;
  vol.series_id = "empty";
  vol.gray.extent = {96, 96, 96};
  vol.gray.voxels.assign(96 * 96 * 96, 0.f);
  CHECK(detect_scan(vol, ck, cfg).empty());

  DetectorConfig wider = cfg;
  wider.backbone = BackboneConfig{}.scaled(1.0 / 8.0);
  wider.backbone.blocks_per_stage = 1;
  CHECK_THROWS_AS(detect_scan(vol, ck, wider), CheckpointError);
}

TEST_CASE("make_training_tile: truths follow placement and flips") {
  DetectorSample sample;
  sample.volume.extent = {40, 40, 40};
  sample.volume.spacing = Vec3(1, 1, 1);
  sample.volume.origin = Vec3(-5, -5, -5);
  sample.volume.voxels.assign(40 * 40 * 40, 0.f);
  sample.volume.at(25, 15, 5) = 1.f;
  sample.nodules.push_back({"s", Vec3(0, 10, 20), 8.0});

  std::mt19937_64 rng(16);
  const TrainingTile plain = make_training_tile(sample, 48, false, rng);
  REQUIRE(plain.truths.size() == 1);
  CHECK(plain.truths[0].center.isApprox(Vec3(5, 15, 25)));
  CHECK(plain.truths[0].side == 8.0);
  CHECK(plain.input.shape() == Shape{1, 1, 48, 48, 48});
  CHECK(plain.input[(25 * 48 + 15) * 48 + 5] == 1.f);

  auto check_tile = [](const TrainingTile& t, Index tile) {
    const Vec3 c = t.truths[0].center;
    const auto ix = [&](int k) { return static_cast<Index>(std::lround(c[k])); };
    REQUIRE((c.array() >= 0).all());
    REQUIRE((c.array() < static_cast<double>(tile)).all());
    REQUIRE(t.input[(ix(2) * tile + ix(1)) * tile + ix(0)] == 1.f);
    REQUIRE(t.input.array().sum() == 1.f);
  };
  for (int i = 0; i < 50; ++i) check_tile(make_training_tile(sample, 48, true, rng), 48);

  // Larger than the tile: the crop must still contain the nodule.
  sample.volume.extent = {80, 80, 80};
  sample.volume.voxels.assign(80 * 80 * 80, 0.f);
  sample.volume.at(60, 70, 10) = 1.f;
  sample.nodules[0].center = Vec3(5, 65, 55);
  for (int i = 0; i < 50; ++i) check_tile(make_training_tile(sample, 48, true, rng), 48);
}
