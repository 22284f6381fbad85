#pragma once

#include "ndk/ct/volume.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace ndk::ct {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NoduleAnnotation {
  std::string series_id;
  Vec3 center;  // world mm
  double diameter = 0.0;
};

/// One detection: world-mm center, diameter, and score.
struct Candidate {
  std::string series_id;
  Vec3 center;
  double diameter = 0.0;
  double score = 0.0;
};

inline constexpr const char* kAnnotationHeader = "seriesuid,coordX,coordY,coordZ,diameter_mm";
inline constexpr const char* kCandidateHeader = "seriesuid,coordX,coordY,coordZ,diameter_mm,probability";

/// Parses annotation CSV text. Diameters outside [3, 30] mm are accepted; their count is
/// returned through `out_of_range` when given.
std::vector<NoduleAnnotation> parse_annotations(std::istream& in, std::size_t* out_of_range = nullptr);
std::vector<NoduleAnnotation> read_annotations(const std::filesystem::path& path);
void write_annotations(std::ostream& out, const std::vector<NoduleAnnotation>& annotations);
void write_annotations(const std::filesystem::path& path, const std::vector<NoduleAnnotation>& annotations);

std::vector<Candidate> parse_candidates(std::istream& in);
std::vector<Candidate> read_candidates(const std::filesystem::path& path);
void write_candidates(std::ostream& out, const std::vector<Candidate>& candidates);
void write_candidates(const std::filesystem::path& path, const std::vector<Candidate>& candidates);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

/// Splits one CSV line on commas (no quoting; ids never contain commas).
std::vector<std::string> split_csv_line(const std::string& line);

double parse_double(const std::string& field, const std::string& what);

}  // namespace ndk::ct
