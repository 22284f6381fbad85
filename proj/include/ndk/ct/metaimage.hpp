#pragma once

#include "ndk/ct/volume.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace ndk::ct {

class MetaImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ElementType { Short, UChar, Float };

const char* to_string(ElementType type);

struct MetaImageHeader {
  Index3 extent;
  Vec3 spacing = Vec3::Ones();
  Vec3 origin = Vec3::Zero();
  ElementType element_type = ElementType::Short;
  bool msb = false;
  std::string data_file;  // "LOCAL" means the bytes follow the header in the same file
};

MetaImageHeader read_metaimage_header(const std::filesystem::path& header_path);

/// Reads an .mhd/.raw pair (or a LOCAL .mha). The stored element type must match T.
template <typename T>
Volume<T> read_metaimage(const std::filesystem::path& header_path);

/// Writes `<stem>.mhd` and `<stem>.raw` next to each other, little-endian.
template <typename T>
void write_metaimage(const std::filesystem::path& header_path, const Volume<T>& volume);

/// Series id is the header file stem.
CtScan read_ct_scan(const std::filesystem::path& header_path);

}  // namespace ndk::ct
