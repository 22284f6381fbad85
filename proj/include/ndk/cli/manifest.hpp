#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace ndk::cli {

std::string sha256_hex(std::string_view bytes);
/// Throws std::runtime_error when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

/// Record of one run: the command, the hash of its resolved config, the seed, and hashes of the
/// files it consumed and produced. Contains no timestamps so identical reruns compare equal.
class RunManifest {
 public:
  RunManifest(std::string command, const std::string& canonical_config, std::uint64_t seed);

  void add_input(const std::string& name, const std::filesystem::path& path);
  /// `relative` is resolved against the run directory when the manifest is written.
  void add_output(const std::filesystem::path& relative);
  void set_value(const std::string& key, const std::string& value);

  /// Hashes the outputs and writes `<dir>/manifest.json`.
  void write(const std::filesystem::path& dir) const;

 private:
  std::string command_;
  std::string config_sha256_;
  std::uint64_t seed_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> values_;
  std::map<std::string, std::filesystem::path> outputs_;
};

}  // namespace ndk::cli
