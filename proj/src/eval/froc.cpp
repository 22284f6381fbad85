#include "ndk/eval/froc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ndk::eval {

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::TruePositive: return "TP";
    case Outcome::FalsePositive: return "FP";
    case Outcome::Duplicate: return "duplicate";
  }
  return "?";
}

MatchResult match_candidates(const std::vector<ct::Candidate>& candidates,
                             const std::vector<ct::NoduleAnnotation>& annotations) {
  MatchResult r;
  r.annotation_hit.assign(annotations.size(), false);
  r.outcome.assign(candidates.size(), Outcome::FalsePositive);
  r.annotation.assign(candidates.size(), -1);
  r.score.reserve(candidates.size());
  for (const auto& c : candidates) r.score.push_back(c.score);

  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return candidates[a].score > candidates[b].score; });
  for (const std::size_t i : order) {
    int best = -1;
    double best_dist = 0.0;
    bool inside_taken = false;
    for (std::size_t a = 0; a < annotations.size(); ++a) {
      const double dist = (candidates[i].center - annotations[a].center).norm();
      if (!(dist < annotations[a].diameter / 2.0)) continue;
      if (r.annotation_hit[a]) {
        inside_taken = true;
      } else if (best < 0 || dist < best_dist) {
        best = static_cast<int>(a);
        best_dist = dist;
      }
    }
    if (best >= 0) {
      r.annotation_hit[static_cast<std::size_t>(best)] = true;
      r.outcome[i] = Outcome::TruePositive;
      r.annotation[i] = best;
    } else if (inside_taken) {
      r.outcome[i] = Outcome::Duplicate;
    }
  }
  return r;
}

double sensitivity_at(const FrocCurve& curve, double fp_per_scan) {
  double s = 0.0;
  for (const auto& p : curve.sweep) {
    if (p.fp_per_scan <= fp_per_scan) s = std::max(s, p.sensitivity);
  }
  return s;
}

FrocCurve froc_curve(std::span<const MatchResult> scans) {
  if (scans.empty()) throw std::invalid_argument("FROC needs at least one scan");
  FrocCurve curve;
  curve.scans = static_cast<Index>(scans.size());
  std::vector<std::pair<double, bool>> counted;  // (score, is true positive)
  for (const auto& m : scans) {
    if (m.outcome.size() != m.score.size()) throw std::invalid_argument("match result has mismatched candidate arrays");
    curve.annotations += static_cast<Index>(m.annotation_hit.size());
    for (std::size_t i = 0; i < m.outcome.size(); ++i) {
      if (m.outcome[i] == Outcome::Duplicate) continue;
      counted.push_back({m.score[i], m.outcome[i] == Outcome::TruePositive});
    }
  }
  if (curve.annotations == 0) throw std::invalid_argument("FROC needs at least one annotated nodule");
  std::sort(counted.begin(), counted.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  const double n_scans = static_cast<double>(curve.scans), n_ann = static_cast<double>(curve.annotations);
  curve.sweep.push_back({0.0, 0.0});
  for (std::size_t i = 0; i < counted.size();) {
    // All candidates sharing a score enter together when the threshold reaches it.
    std::size_t j = i;
    for (; j < counted.size() && counted[j].first == counted[i].first; ++j) {
      (counted[j].second ? curve.true_positives : curve.false_positives) += 1;
    }
    curve.sweep.push_back({static_cast<double>(curve.false_positives) / n_scans,
                           static_cast<double>(curve.true_positives) / n_ann});
    i = j;
  }
  std::array<double, 7> sens{};
  for (std::size_t k = 0; k < kFrocLevels.size(); ++k) {
    sens[k] = sensitivity_at(curve, kFrocLevels[k]);
    curve.points[k] = {kFrocLevels[k], sens[k]};
  }
  curve.cpm = cpm(sens);
  return curve;
}

double cpm(std::span<const double> sensitivities) {
  if (sensitivities.size() != kFrocLevels.size()) {
    throw std::invalid_argument("CPM needs 7 sensitivities, got " + std::to_string(sensitivities.size()));
  }
  double sum = 0.0;
  for (const double s : sensitivities) sum += s;
  return sum / static_cast<double>(sensitivities.size());
}

double cpm(const FrocCurve& curve) {
  std::array<double, 7> s{};
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = curve.points[k].sensitivity;
  return cpm(s);
}

FrocCurve evaluate(const std::vector<ct::Candidate>& candidates, const std::vector<ct::NoduleAnnotation>& annotations,
                   const std::vector<std::string>& series) {
  std::vector<std::string> ids = series;
  if (ids.empty()) {
    std::set<std::string> seen;
    for (const auto& a : annotations) seen.insert(a.series_id);
    for (const auto& c : candidates) seen.insert(c.series_id);
    ids.assign(seen.begin(), seen.end());
  }
  std::map<std::string, std::size_t> slot;
  for (const auto& id : ids) slot.emplace(id, slot.size());
  std::vector<std::vector<ct::Candidate>> cands(slot.size());
  std::vector<std::vector<ct::NoduleAnnotation>> anns(slot.size());
  for (const auto& c : candidates) {
    const auto it = slot.find(c.series_id);
    if (it == slot.end()) throw std::invalid_argument("candidate for unknown series " + c.series_id);
    cands[it->second].push_back(c);
  }
  for (const auto& a : annotations) {
    const auto it = slot.find(a.series_id);
    if (it == slot.end()) throw std::invalid_argument("annotation for unknown series " + a.series_id);
    anns[it->second].push_back(a);
  }
  std::vector<MatchResult> matches;
  for (std::size_t s = 0; s < slot.size(); ++s) matches.push_back(match_candidates(cands[s], anns[s]));
  return froc_curve(matches);
}

ReportFiles emit_report(const FrocCurve& curve, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  ReportFiles files{dir / "froc.csv", dir / "froc.svg"};
  {
    std::ofstream out(files.csv);
    if (!out) throw std::runtime_error("cannot write " + files.csv.string());
    out << "fp_per_scan,sensitivity\n";
    for (const auto& p : curve.points) out << ct::format_double(p.fp_per_scan) << ',' << ct::format_double(p.sensitivity) << '\n';
    if (!out) throw std::runtime_error("failed writing " + files.csv.string());
  }
  std::ofstream out(files.svg);
  if (!out) throw std::runtime_error("cannot write " + files.svg.string());
  out << render_svg(curve);
  if (!out) throw std::runtime_error("failed writing " + files.svg.string());
  return files;
}

std::array<FrocPoint, 7> read_froc_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "fp_per_scan,sensitivity") {
    throw ct::CsvError(path.string() + ": expected header fp_per_scan,sensitivity");
  }
  std::array<FrocPoint, 7> points{};
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = ct::split_csv_line(line);
    if (f.size() != 2) throw ct::CsvError(path.string() + ": expected 2 fields in '" + line + "'");
    if (n == points.size()) throw ct::CsvError(path.string() + ": more than 7 rows");
    points[n++] = {ct::parse_double(f[0], "fp_per_scan"), ct::parse_double(f[1], "sensitivity")};
  }
  if (n != points.size()) throw ct::CsvError(path.string() + ": expected 7 rows, got " + std::to_string(n));
  return points;
}

std::string render_svg(const FrocCurve& curve) {
  constexpr double W = 640, H = 440, left = 70, right = 20, top = 40, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  const double lo = std::log2(kFrocLevels.front()), hi = std::log2(kFrocLevels.back());
  auto px = [&](double fp) { return left + (std::log2(std::clamp(fp, kFrocLevels.front(), kFrocLevels.back())) - lo) / (hi - lo) * pw; };
  auto py = [&](double s) { return top + (1.0 - s) * ph; };
  auto num = [](double v) {
    std::ostringstream o;
    o.precision(6);
    o << v;
    return o.str();
  };
  const std::array<const char*, 7> labels{"1/8", "1/4", "1/2", "1", "2", "4", "8"};

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' '
    << H << "\">\n"
    << "  <rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
    << "  <g stroke=\"#dddddd\" stroke-width=\"1\">\n";
  for (const double fp : kFrocLevels) s << "    <line x1=\"" << num(px(fp)) << "\" y1=\"" << top << "\" x2=\"" << num(px(fp)) << "\" y2=\"" << top + ph << "\"/>\n";
  for (int k = 0; k <= 10; ++k) s << "    <line x1=\"" << left << "\" y1=\"" << num(py(k / 10.0)) << "\" x2=\"" << left + pw << "\" y2=\"" << num(py(k / 10.0)) << "\"/>\n";
  s << "  </g>\n"
    << "  <rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n"
    << "  <g font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">\n";
  for (std::size_t k = 0; k < labels.size(); ++k) {
    s << "    <text x=\"" << num(px(kFrocLevels[k])) << "\" y=\"" << top + ph + 18 << "\">" << labels[k] << "</text>\n";
  }
  for (int k = 0; k <= 10; k += 2) {
    s << "    <text x=\"" << left - 8 << "\" y=\"" << num(py(k / 10.0) + 4) << "\" text-anchor=\"end\">" << num(k / 10.0) << "</text>\n";
  }
  s << "    <text x=\"" << left + pw / 2 << "\" y=\"" << H - 15 << "\">Average false positives per scan</text>\n"
    << "    <text x=\"18\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 18 " << top + ph / 2 << ")\">Sensitivity</text>\n"
    << "    <text x=\"" << left + pw / 2 << "\" y=\"24\" font-size=\"14\">FROC (CPM " << num(curve.cpm) << ")</text>\n"
    << "  </g>\n";

  // Step curve: best sensitivity reachable within each false-positive budget.
  s << "  <polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  double level = sensitivity_at(curve, kFrocLevels.front());
  s << num(px(kFrocLevels.front())) << ',' << num(py(level));
  for (const auto& p : curve.sweep) {
    if (p.fp_per_scan <= kFrocLevels.front() || p.fp_per_scan > kFrocLevels.back() || p.sensitivity <= level) continue;
    s << ' ' << num(px(p.fp_per_scan)) << ',' << num(py(level)) << ' ' << num(px(p.fp_per_scan)) << ',' << num(py(p.sensitivity));
    level = p.sensitivity;
  }
  s << ' ' << num(px(kFrocLevels.back())) << ',' << num(py(level)) << "\"/>\n"
    << "  <g fill=\"#1f77b4\">\n";
  for (const auto& p : curve.points) {
    s << "    <circle cx=\"" << num(px(p.fp_per_scan)) << "\" cy=\"" << num(py(p.sensitivity)) << "\" r=\"4\"/>\n";
  }
  s << "  </g>\n</svg>\n";
  return s.str();
}

}  // namespace ndk::eval
