#include <doctest.h>

#include "ndk/eval/froc.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

using namespace ndk;
using namespace ndk::eval;
using ct::Candidate;
using ct::NoduleAnnotation;

namespace {

struct Scan {
  std::vector<Candidate> candidates;
  std::vector<NoduleAnnotation> annotations;
};

// Two scans, three nodules, six candidates; see the expected sweep in the test below.
std::vector<Scan> hand_fixture() {
  Scan a, b;
  a.annotations = {{"a", {0, 0, 0}, 10}, {"a", {30, 0, 0}, 8}};
  a.candidates = {{"a", {1, 0, 0}, 6, 0.9}, {"a", {0, 2, 0}, 6, 0.8}, {"a", {50, 0, 0}, 6, 0.7}, {"a", {30, 3.9, 0}, 6, 0.4}};
  b.annotations = {{"b", {0, 0, 0}, 6}};
  b.candidates = {{"b", {0, 0, 3}, 6, 0.6}, {"b", {0, 0, 1}, 6, 0.3}};
  return {a, b};
}

std::vector<MatchResult> match_all(const std::vector<Scan>& scans) {
  std::vector<MatchResult> m;
  for (const auto& s : scans) m.push_back(match_candidates(s.candidates, s.annotations));
  return m;
}

// Exhaustive oracle: for every threshold, keep candidates scoring at least that much, rematch
// each scan from scratch and count; each level takes the best sensitivity within its budget.
std::array<double, 7> brute_froc(const std::vector<Scan>& scans) {
  std::set<double> thresholds{std::numeric_limits<double>::infinity()};
  double annotations = 0;
  for (const auto& s : scans) {
    annotations += static_cast<double>(s.annotations.size());
    for (const auto& c : s.candidates) thresholds.insert(c.score);
  }
  std::array<double, 7> best{};
  for (const double t : thresholds) {
    double tp = 0, fp = 0;
    for (const auto& s : scans) {
      std::vector<Candidate> kept;
      for (const auto& c : s.candidates)
        if (c.score >= t) kept.push_back(c);
      std::sort(kept.begin(), kept.end(), [](const Candidate& x, const Candidate& y) { return x.score > y.score; });
      std::vector<bool> hit(s.annotations.size(), false);
      for (const auto& c : kept) {
        int free = -1;
        double free_dist = 0;
        bool any = false;
        for (std::size_t a = 0; a < s.annotations.size(); ++a) {
          const double d = (c.center - s.annotations[a].center).norm();
          if (d >= s.annotations[a].diameter / 2) continue;
          any = true;
          if (!hit[a] && (free < 0 || d < free_dist)) free = static_cast<int>(a), free_dist = d;
        }
        if (free >= 0) hit[static_cast<std::size_t>(free)] = true, ++tp;
        else if (!any) ++fp;
      }
    }
    for (std::size_t k = 0; k < 7; ++k)
      if (fp / static_cast<double>(scans.size()) <= kFrocLevels[k]) best[k] = std::max(best[k], tp / annotations);
  }
  return best;
}

std::vector<Scan> random_scans(std::mt19937_64& rng, int n_scans) {
  std::uniform_real_distribution<double> pos(-60, 60), jitter(-8, 8), diam(4, 20), score(0, 1);
  std::uniform_int_distribution<int> n_ann(0, 3), n_fp(0, 12), n_near(0, 3);
  std::vector<Scan> out(static_cast<std::size_t>(n_scans));
  for (int s = 0; s < n_scans; ++s) {
    Scan& scan = out[static_cast<std::size_t>(s)];
    const std::string id = "s" + std::to_string(s);
    for (int a = n_ann(rng); a > 0; --a) {
      NoduleAnnotation ann{id, {pos(rng), pos(rng), pos(rng)}, diam(rng)};
      for (int k = n_near(rng); k > 0; --k) {
        scan.candidates.push_back({id, ann.center + ct::Vec3(jitter(rng), jitter(rng), jitter(rng)), 8, score(rng)});
      }
      scan.annotations.push_back(ann);
    }
    for (int k = n_fp(rng); k > 0; --k) scan.candidates.push_back({id, {pos(rng), pos(rng), pos(rng)}, 8, score(rng)});
  }
  if (out[0].annotations.empty()) out[0].annotations.push_back({"s0", {100, 100, 100}, 10});
  return out;
}

}  // namespace

TEST_CASE("match_candidates: hit boundary, duplicates and greedy order") {
  const std::vector<NoduleAnnotation> ann{{"x", {0, 0, 0}, 10}};
  SUBCASE("centre hit") {
    const auto m = match_candidates({{"x", {0, 0, 0}, 5, 0.5}}, ann);
    CHECK(m.outcome[0] == Outcome::TruePositive);
    CHECK(m.annotation_hit[0]);
    CHECK(m.annotation[0] == 0);
  }
  SUBCASE("radius is exclusive") {
    CHECK(match_candidates({{"x", {5, 0, 0}, 5, 0.5}}, ann).outcome[0] == Outcome::FalsePositive);
    CHECK(match_candidates({{"x", {5 + 1e-9, 0, 0}, 5, 0.5}}, ann).outcome[0] == Outcome::FalsePositive);
    CHECK(match_candidates({{"x", {5 - 1e-9, 0, 0}, 5, 0.5}}, ann).outcome[0] == Outcome::TruePositive);
  }
  SUBCASE("second candidate inside a hit nodule is ignored") {
    const auto m = match_candidates({{"x", {1, 0, 0}, 5, 0.9}, {"x", {0, 1, 0}, 5, 0.8}}, ann);
    CHECK(m.outcome[0] == Outcome::TruePositive);
    CHECK(m.outcome[1] == Outcome::Duplicate);
    CHECK(m.annotation[1] == -1);
  }
  SUBCASE("higher score claims the nodule regardless of input order") {
    const auto m = match_candidates({{"x", {0, 1, 0}, 5, 0.2}, {"x", {1, 0, 0}, 5, 0.9}}, ann);
    CHECK(m.outcome[0] == Outcome::Duplicate);
    CHECK(m.outcome[1] == Outcome::TruePositive);
  }
  SUBCASE("overlapping nodules: a candidate takes the nearest free one") {
    const std::vector<NoduleAnnotation> two{{"x", {0, 0, 0}, 20}, {"x", {4, 0, 0}, 20}};
    const auto m = match_candidates({{"x", {3, 0, 0}, 5, 0.9}, {"x", {3, 0, 0}, 5, 0.8}, {"x", {3, 0, 0}, 5, 0.7}}, two);
    CHECK(m.annotation[0] == 1);
    CHECK(m.annotation[1] == 0);
    CHECK(m.outcome[2] == Outcome::Duplicate);
  }
  SUBCASE("no annotations: every candidate is a false positive") {
    const auto m = match_candidates({{"x", {0, 0, 0}, 5, 0.9}, {"x", {1, 0, 0}, 5, 0.1}}, {});
    CHECK(m.outcome[0] == Outcome::FalsePositive);
    CHECK(m.outcome[1] == Outcome::FalsePositive);
  }
}

TEST_CASE("froc_curve: hand fixture against the sweep and the exhaustive oracle") {
  const auto scans = hand_fixture();
  const auto matches = match_all(scans);
  CHECK(matches[0].outcome[1] == Outcome::Duplicate);
  CHECK(matches[1].outcome[0] == Outcome::FalsePositive);  // distance 3 equals the radius
  const FrocCurve c = froc_curve(matches);
  // Counted candidates by score: TP .9, FP .7, FP .6, TP .4, TP .3 over 2 scans and 3 nodules.
  REQUIRE(c.sweep.size() == 6);
  const std::vector<std::pair<double, double>> sweep{{0, 0}, {0, 1. / 3}, {0.5, 1. / 3}, {1, 1. / 3}, {1, 2. / 3}, {1, 1}};
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    CHECK(c.sweep[i].fp_per_scan == doctest::Approx(sweep[i].first).epsilon(1e-12));
    CHECK(c.sweep[i].sensitivity == doctest::Approx(sweep[i].second).epsilon(1e-12));
  }
  const std::array<double, 7> expected{1. / 3, 1. / 3, 1. / 3, 1, 1, 1, 1};
  const auto oracle = brute_froc(scans);
  for (std::size_t k = 0; k < 7; ++k) {
    CHECK(c.points[k].fp_per_scan == kFrocLevels[k]);
    CHECK(c.points[k].sensitivity == doctest::Approx(expected[k]).epsilon(1e-12));
    CHECK(oracle[k] == doctest::Approx(expected[k]).epsilon(1e-12));
  }
  CHECK(c.cpm == doctest::Approx(5.0 / 7.0).epsilon(1e-12));
  CHECK(c.true_positives == 3);
  CHECK(c.false_positives == 2);
  CHECK(c.annotations == 3);
  CHECK(c.scans == 2);
}

TEST_CASE("froc_curve: tied scores enter the sweep together") {
  const std::vector<NoduleAnnotation> ann{{"x", {0, 0, 0}, 10}};
  const auto m = match_candidates({{"x", {50, 0, 0}, 5, 0.5}, {"x", {0, 0, 0}, 5, 0.5}}, ann);
  const std::vector<MatchResult> ms{m};
  const FrocCurve c = froc_curve(ms);
  CHECK(c.sweep.size() == 2);
  CHECK(c.points[0].sensitivity == 0.0);  // reaching the TP costs one FP per scan
  CHECK(c.points[3].sensitivity == 1.0);
}

TEST_CASE("froc_curve: perfect, empty and error cases") {
  std::vector<Scan> scans = hand_fixture();
  for (auto& s : scans) {
    s.candidates.clear();
    for (const auto& a : s.annotations) s.candidates.push_back({a.series_id, a.center, a.diameter, 1.0});
  }
  FrocCurve perfect = froc_curve(match_all(scans));
  for (const auto& p : perfect.points) CHECK(p.sensitivity == 1.0);
  CHECK(perfect.cpm == 1.0);

  for (auto& s : scans) s.candidates.clear();
  FrocCurve none = froc_curve(match_all(scans));
  for (const auto& p : none.points) CHECK(p.sensitivity == 0.0);
  CHECK(none.cpm == 0.0);

  CHECK_THROWS_AS(froc_curve(std::vector<MatchResult>{}), std::invalid_argument);
  const std::vector<MatchResult> unannotated{match_candidates({{"x", {0, 0, 0}, 5, 0.5}}, {})};
  CHECK_THROWS_AS(froc_curve(unannotated), std::invalid_argument);
}

TEST_CASE("cpm: published rows and point count") {
  const std::array<double, 7> row{0.848, 0.876, 0.905, 0.933, 0.943, 0.957, 0.970};
  CHECK(std::abs(cpm(row) - 0.919) <= 0.0005);
  const std::array<double, 7> starred{0.906, 0.923, 0.948, 0.981, 0.981, 0.981, 0.981};
  CHECK(std::abs(cpm(starred) - 0.957) <= 0.0005);
  CHECK(cpm(std::array<double, 7>{1, 1, 1, 1, 1, 1, 1}) == 1.0);
  CHECK(cpm(std::array<double, 7>{}) == 0.0);
  CHECK_THROWS_AS(cpm(std::array<double, 6>{}), std::invalid_argument);
  CHECK_THROWS_AS(cpm(std::vector<double>(8, 0.5)), std::invalid_argument);
}

TEST_CASE("froc_curve: random instances match the oracle; monotone and rank invariant") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    auto scans = random_scans(rng, 1 + trial % 5);
    const FrocCurve c = froc_curve(match_all(scans));
    const auto oracle = brute_froc(scans);
    double sum = 0;
    for (std::size_t k = 0; k < 7; ++k) {
      CHECK(c.points[k].sensitivity == doctest::Approx(oracle[k]).epsilon(1e-12));
      if (k > 0) CHECK(c.points[k].sensitivity >= c.points[k - 1].sensitivity);
      sum += c.points[k].sensitivity;
    }
    CHECK(std::abs(c.cpm - sum / 7) <= 1e-9);
    for (auto& s : scans)
      for (auto& cand : s.candidates) cand.score = std::exp(3 * cand.score) - 0.5;
    const FrocCurve t = froc_curve(match_all(scans));
    for (std::size_t k = 0; k < 7; ++k) CHECK(t.points[k].sensitivity == c.points[k].sensitivity);
  }
}

TEST_CASE("evaluate: grouping by series, scans without nodules and unknown ids") {
  const auto scans = hand_fixture();
  std::vector<Candidate> cands;
  std::vector<NoduleAnnotation> anns;
  for (const auto& s : scans) {
    cands.insert(cands.end(), s.candidates.begin(), s.candidates.end());
    anns.insert(anns.end(), s.annotations.begin(), s.annotations.end());
  }
  CHECK(evaluate(cands, anns).cpm == doctest::Approx(5.0 / 7.0).epsilon(1e-12));
  // A third, clean scan halves nothing but the per-scan FP rate.
  const FrocCurve three = evaluate(cands, anns, {"a", "b", "c"});
  CHECK(three.scans == 3);
  CHECK(three.points[2].sensitivity == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(three.points[3].sensitivity == 1.0);  // 2 FPs / 3 scans <= 1
  CHECK_THROWS_AS(evaluate(cands, anns, {"a"}), std::invalid_argument);
}

TEST_CASE("emit_report: CSV round trip and well-formed SVG") {
  const FrocCurve c = froc_curve(match_all(hand_fixture()));
  const auto dir = std::filesystem::temp_directory_path() / "ndk_test_eval_report";
  std::filesystem::remove_all(dir);
  const ReportFiles files = emit_report(c, dir);

  std::ifstream csv(files.csv);
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 7);
  const auto back = read_froc_csv(files.csv);
  for (std::size_t k = 0; k < 7; ++k) {
    CHECK(std::abs(back[k].fp_per_scan - c.points[k].fp_per_scan) <= 1e-9);
    CHECK(std::abs(back[k].sensitivity - c.points[k].sensitivity) <= 1e-9);
  }

  boost::property_tree::ptree tree;
  REQUIRE_NOTHROW(boost::property_tree::read_xml(files.svg.string(), tree));
  const auto& svg = tree.get_child("svg");
  CHECK(svg.get<std::string>("<xmlattr>.xmlns") == "http://www.w3.org/2000/svg");
  int circles = 0;
  for (const auto& child : svg) {
    if (child.first != "g") continue;
    for (const auto& inner : child.second) circles += inner.first == "circle" ? 1 : 0;
  }
  CHECK(circles == 7);
  CHECK(svg.count("polyline") == 1);
  // log2 axis: equal spacing between consecutive levels.
  std::vector<double> xs;
  for (const auto& child : svg)
    if (child.first == "g")
      for (const auto& inner : child.second)
        if (inner.first == "circle") xs.push_back(inner.second.get<double>("<xmlattr>.cx"));
  REQUIRE(xs.size() == 7);
  for (std::size_t k = 2; k < 7; ++k) CHECK(xs[k] - xs[k - 1] == doctest::Approx(xs[1] - xs[0]).epsilon(1e-4));

  CHECK_THROWS_AS(emit_report(c, files.csv / "sub"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
