#include "ndk/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace ndk::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& key) {
  if (key.empty() || key.front() == '.' || key.back() == '.' || key.find("..") != std::string::npos) return false;
  return std::all_of(key.begin(), key.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' || c == '.';
  });
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  if (trim(value).empty()) return out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc{} || ptr != end) {
    throw UsageError("config key '" + key + "': '" + text + "' is not a valid " +
                     (std::is_integral_v<T> ? "integer" : "number"));
  }
  return v;
}

}  // namespace

Config::Config(std::vector<KeySpec> schema) : schema_(std::move(schema)) {
  for (const auto& k : schema_) {
    if (!valid_key(k.key)) throw std::logic_error("invalid schema key '" + k.key + "'");
    if (!values_.emplace(k.key, k.default_value).second) throw std::logic_error("duplicate schema key '" + k.key + "'");
  }
}

const KeySpec& Config::spec(const std::string& key) const {
  const auto it = std::find_if(schema_.begin(), schema_.end(), [&](const KeySpec& k) { return k.key == key; });
  if (it == schema_.end()) throw std::logic_error("key '" + key + "' is not in the schema");
  return *it;
}

void Config::assign(const std::string& key, const std::string& value, const std::string& where) {
  if (!valid_key(key)) throw UsageError(where + ": malformed key '" + key + "'");
  if (!values_.contains(key)) throw UsageError(where + ": unknown config key '" + key + "'");
  if (const auto it = explicit_.find(key); it != explicit_.end() && it->second != "override") {
    if (where != "override") throw UsageError(where + ": key '" + key + "' already set at " + it->second);
  }
  values_[key] = value;
  explicit_[key] = where;
}

void Config::parse(const std::string& text, const std::string& origin) {
  std::stringstream in(text);
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(n);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(where + ": expected 'key = value', got '" + line + "'");
    assign(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
  }
}

void Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  parse(buf.str(), path.filename().string());
}

void Config::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw UsageError("override '" + assignment + "' is not key=value");
  assign(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), "override");
}

bool Config::has(const std::string& key) const { return explicit_.contains(key); }

const std::string& Config::raw(const std::string& key) const {
  spec(key);
  return values_.at(key);
}

std::string Config::get_string(const std::string& key) const { return raw(key); }

std::int64_t Config::get_int(const std::string& key) const { return parse_number<std::int64_t>(raw(key), key); }

double Config::get_double(const std::string& key) const {
  const std::string& v = raw(key);
  // Accept simple fractions such as 1/8.
  if (const auto slash = v.find('/'); slash != std::string::npos) {
    const double den = parse_number<double>(trim(v.substr(slash + 1)), key);
    if (den == 0) throw UsageError("config key '" + key + "': division by zero in '" + v + "'");
    return parse_number<double>(trim(v.substr(0, slash)), key) / den;
  }
  return parse_number<double>(v, key);
}

bool Config::get_bool(const std::string& key) const {
  const std::string& v = raw(key);
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw UsageError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<std::int64_t> Config::get_int_list(const std::string& key) const {
  std::vector<std::int64_t> out;
  for (const auto& item : split_list(raw(key))) out.push_back(parse_number<std::int64_t>(item, key));
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(raw(key))) out.push_back(parse_number<double>(item, key));
  return out;
}

std::string Config::canonical(const std::vector<std::string>& skip) const {
  std::string out;
  for (const auto& [k, v] : values_) {
    if (std::find(skip.begin(), skip.end(), k) == skip.end()) out += k + " = " + v + "\n";
  }
  return out;
}

std::string describe(const std::vector<KeySpec>& schema) {
  std::size_t width = 0;
  for (const auto& k : schema) width = std::max(width, k.key.size());
  std::string out;
  for (const auto& k : schema) {
    out += "  " + k.key + std::string(width - k.key.size() + 2, ' ') + k.help;
    out += " (default: " + (k.default_value.empty() ? std::string("none") : k.default_value) + ")\n";
  }
  return out;
}

}  // namespace ndk::cli
