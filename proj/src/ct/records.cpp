#include "ndk/ct/records.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

namespace ndk::ct {

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

double parse_double(const std::string& field, const std::string& what) {
  std::size_t b = field.find_first_not_of(' ');
  std::size_t e = field.find_last_not_of(' ');
  if (b == std::string::npos) throw CsvError("empty " + what);
  double v = 0;
  const auto res = std::from_chars(field.data() + b, field.data() + e + 1, v);
  if (res.ec != std::errc() || res.ptr != field.data() + e + 1 || !std::isfinite(v)) {
    throw CsvError("bad " + what + " '" + field + "'");
  }
  return v;
}

namespace {

template <typename Row>
std::vector<Row> parse_rows(std::istream& in, const char* header, std::size_t columns,
                            Row (*make)(const std::vector<std::string>&, std::size_t)) {
  std::string line;
  if (!std::getline(in, line)) throw CsvError("empty CSV; expected header '" + std::string(header) + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw CsvError("unexpected CSV header '" + line + "'");
  std::vector<Row> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != columns) {
      throw CsvError("line " + std::to_string(lineno) + ": expected " + std::to_string(columns) + " fields, got " +
                     std::to_string(f.size()));
    }
    rows.push_back(make(f, lineno));
  }
  return rows;
}

NoduleAnnotation make_annotation(const std::vector<std::string>& f, std::size_t lineno) {
  const std::string at = " on line " + std::to_string(lineno);
  NoduleAnnotation a{f[0],
                     {parse_double(f[1], "coordX" + at), parse_double(f[2], "coordY" + at),
                      parse_double(f[3], "coordZ" + at)},
                     parse_double(f[4], "diameter_mm" + at)};
  if (a.diameter <= 0) throw CsvError("non-positive diameter" + at);
  return a;
}

Candidate make_candidate(const std::vector<std::string>& f, std::size_t lineno) {
  const std::string at = " on line " + std::to_string(lineno);
  Candidate c{f[0],
              {parse_double(f[1], "coordX" + at), parse_double(f[2], "coordY" + at), parse_double(f[3], "coordZ" + at)},
              parse_double(f[4], "diameter_mm" + at),
              parse_double(f[5], "probability" + at)};
  if (c.diameter <= 0) throw CsvError("non-positive diameter" + at);
  if (c.score < 0 || c.score > 1) throw CsvError("probability outside [0,1]" + at);
  return c;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw CsvError("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

std::vector<NoduleAnnotation> parse_annotations(std::istream& in, std::size_t* out_of_range) {
  auto rows = parse_rows<NoduleAnnotation>(in, kAnnotationHeader, 5, make_annotation);
  if (out_of_range) {
    *out_of_range = static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [](const auto& a) { return a.diameter < 3.0 || a.diameter > 30.0; }));
  }
  return rows;
}

std::vector<NoduleAnnotation> read_annotations(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_annotations(in);
}

void write_annotations(std::ostream& out, const std::vector<NoduleAnnotation>& annotations) {
  out << kAnnotationHeader << '\n';
  for (const auto& a : annotations) {
    out << a.series_id << ',' << format_double(a.center.x()) << ',' << format_double(a.center.y()) << ','
        << format_double(a.center.z()) << ',' << format_double(a.diameter) << '\n';
  }
}

void write_annotations(const std::filesystem::path& path, const std::vector<NoduleAnnotation>& annotations) {
  auto out = open_out(path);
  write_annotations(out, annotations);
}

std::vector<Candidate> parse_candidates(std::istream& in) {
  return parse_rows<Candidate>(in, kCandidateHeader, 6, make_candidate);
}

std::vector<Candidate> read_candidates(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_candidates(in);
}

void write_candidates(std::ostream& out, const std::vector<Candidate>& candidates) {
  out << kCandidateHeader << '\n';
  for (const auto& c : candidates) {
    out << c.series_id << ',' << format_double(c.center.x()) << ',' << format_double(c.center.y()) << ','
        << format_double(c.center.z()) << ',' << format_double(c.diameter) << ',' << format_double(c.score) << '\n';
  }
}

void write_candidates(const std::filesystem::path& path, const std::vector<Candidate>& candidates) {
  auto out = open_out(path);
  write_candidates(out, candidates);
}

}  // namespace ndk::ct
