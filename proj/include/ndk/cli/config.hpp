#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ndk::cli {

/// Bad command line or configuration (exit code 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One documented configuration key.
struct KeySpec {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Plain-text configuration: `key = value` lines, `#` starts a comment, keys are dotted
/// (`train.epochs`). Only keys listed in the schema are accepted; missing keys take the
/// schema default.
class Config {
 public:
  Config() = default;
  explicit Config(std::vector<KeySpec> schema);

  /// Parses text into the config. `origin` names the source in error messages.
  /// Throws UsageError on syntax errors, duplicate keys and keys outside the schema.
  void parse(const std::string& text, const std::string& origin = "config");
  void load(const std::filesystem::path& path);
  /// Applies a `key=value` override (same checks as a file line).
  void set(const std::string& assignment);

  bool has(const std::string& key) const;
  const std::string& raw(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::int64_t> get_int_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  /// Every schema key with its effective value, sorted, one `key = value` per line, minus `skip`.
  std::string canonical(const std::vector<std::string>& skip = {}) const;
  const std::vector<KeySpec>& schema() const { return schema_; }

 private:
  void assign(const std::string& key, const std::string& value, const std::string& where);
  const KeySpec& spec(const std::string& key) const;

  std::vector<KeySpec> schema_;
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> explicit_;  // key -> where it was set
};

/// Text for `--help`: one line per key with its default.
std::string describe(const std::vector<KeySpec>& schema);

}  // namespace ndk::cli
