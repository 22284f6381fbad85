#pragma once

#include "ndk/layers.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace ndk {

/// Ordered list of named float tensors.
///
/// On disk: "NDK1", u64 record count, then per record: u64 name length, UTF-8 name, u64 rank,
/// rank x u64 extents, and the values as little-endian IEEE-754 binary32. All integers are
/// little-endian.
class Checkpoint {
 public:
  using Entry = std::pair<std::string, Tensor<float>>;

  void add(std::string name, Tensor<float> tensor);
  bool contains(const std::string& name) const;
  const Tensor<float>& get(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Keeps the entries whose name starts with `prefix`.
  Checkpoint filtered(const std::string& prefix) const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;

 private:
  std::vector<Entry> entries_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parameters followed by buffers, converted to float.
template <typename Scalar>
Checkpoint state_dict(Module<Scalar>& module);

enum class LoadMode {
  Strict,   // every module tensor must be present; extra checkpoint entries are an error
  Partial,  // load what matches by name; shapes must still agree
};

/// Returns the number of tensors loaded. Throws CheckpointError on shape mismatches or,
/// in strict mode, on missing/extra names.
template <typename Scalar>
std::size_t load_state_dict(Module<Scalar>& module, const Checkpoint& checkpoint, LoadMode mode = LoadMode::Strict);

}  // namespace ndk
