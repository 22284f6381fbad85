#pragma once

#include "ndk/ct/records.hpp"
#include "ndk/tensor.hpp"

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ndk::eval {

/// Average false positives per scan at which sensitivity is read off.
inline constexpr std::array<double, 7> kFrocLevels{0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};

enum class Outcome { TruePositive, FalsePositive, Duplicate };

const char* outcome_name(Outcome o);

/// Matching of one scan's candidates against its annotations.
struct MatchResult {
  std::vector<bool> annotation_hit;
  std::vector<Outcome> outcome;  // per candidate, input order
  std::vector<int> annotation;   // matched annotation per candidate, -1 for false positives
  std::vector<double> score;     // per candidate, input order
};

/// A candidate hits an annotation when their centres are closer than the annotation radius.
/// Candidates are visited by descending score (ties keep input order); each takes the nearest
/// annotation it hits that is still free. A candidate that only hits taken annotations is a
/// duplicate and counts neither way.
MatchResult match_candidates(const std::vector<ct::Candidate>& candidates,
                             const std::vector<ct::NoduleAnnotation>& annotations);

struct FrocPoint {
  double fp_per_scan = 0.0;
  double sensitivity = 0.0;
};

struct FrocCurve {
  std::array<FrocPoint, 7> points{};
  double cpm = 0.0;
  /// Every operating point of the threshold sweep, from the empty set down to all candidates.
  std::vector<FrocPoint> sweep;
  Index scans = 0;
  Index annotations = 0;
  Index true_positives = 0;   // with every candidate kept
  Index false_positives = 0;  // with every candidate kept
};

/// Sweeps the threshold over the candidate scores. At each level the sensitivity is that of the
/// most permissive threshold whose average false positives per scan stay within the level.
/// Throws std::invalid_argument for zero scans or zero annotations.
FrocCurve froc_curve(std::span<const MatchResult> scans);

/// Mean of exactly seven sensitivities; throws std::invalid_argument otherwise.
double cpm(std::span<const double> sensitivities);
double cpm(const FrocCurve& curve);

/// Groups candidates and annotations by series and scores them. `series` lists every scan in the
/// test set (scans without nodules still count); when empty, the union of ids seen is used.
/// Throws std::invalid_argument for candidates of unknown series.
FrocCurve evaluate(const std::vector<ct::Candidate>& candidates, const std::vector<ct::NoduleAnnotation>& annotations,
                   const std::vector<std::string>& series = {});

/// Sensitivity of the most permissive operating point with at most `fp_per_scan` average false positives.
double sensitivity_at(const FrocCurve& curve, double fp_per_scan);

struct ReportFiles {
  std::filesystem::path csv;
  std::filesystem::path svg;
};

/// Writes `<dir>/froc.csv` (header plus seven rows) and `<dir>/froc.svg` (log2 abscissa).
/// Throws std::runtime_error when the directory cannot be written.
ReportFiles emit_report(const FrocCurve& curve, const std::filesystem::path& dir);

std::array<FrocPoint, 7> read_froc_csv(const std::filesystem::path& path);

/// Standalone SVG markup for the curve.
std::string render_svg(const FrocCurve& curve);

}  // namespace ndk::eval
