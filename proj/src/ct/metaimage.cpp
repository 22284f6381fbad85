#include "ndk/ct/metaimage.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace ndk::ct {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
constexpr ElementType element_type_of() {
  if constexpr (std::is_same_v<T, std::int16_t>) return ElementType::Short;
  else if constexpr (std::is_same_v<T, std::uint8_t>) return ElementType::UChar;
  else {
    static_assert(std::is_same_v<T, float>, "unsupported MetaImage element type");
    return ElementType::Float;
  }
}

ElementType parse_element_type(const std::string& s) {
  if (s == "MET_SHORT") return ElementType::Short;
  if (s == "MET_UCHAR") return ElementType::UChar;
  if (s == "MET_FLOAT") return ElementType::Float;
  throw MetaImageError("unsupported ElementType '" + s + "'");
}

Vec3 parse_vec3(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  Vec3 v;
  if (!(is >> v.x() >> v.y() >> v.z())) throw MetaImageError("expected three numbers for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "True" || value == "true" || value == "1") return true;
  if (value == "False" || value == "false" || value == "0") return false;
  throw MetaImageError("bad boolean for " + key + ": '" + value + "'");
}

struct ParsedHeader {
  MetaImageHeader header;
  std::size_t data_offset = 0;  // for LOCAL data
};

ParsedHeader parse_header(const std::string& text, const std::string& where) {
  std::map<std::string, std::string> kv;
  std::size_t pos = 0;
  std::size_t data_offset = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (trim(line).empty()) continue;
      throw MetaImageError(where + ": malformed header line '" + trim(line) + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    kv[key] = trim(line.substr(eq + 1));
    // ElementDataFile must be the last key; anything after it is pixel data.
    if (key == "ElementDataFile") {
      data_offset = std::min(pos, text.size());
      break;
    }
  }
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw MetaImageError(where + ": missing header key " + key);
    return it->second;
  };

  ParsedHeader out;
  MetaImageHeader& h = out.header;
  if (kv.count("NDims") && kv["NDims"] != "3") throw MetaImageError(where + ": only 3-D images are supported");
  if (kv.count("CompressedData") && parse_bool("CompressedData", kv["CompressedData"])) {
    throw MetaImageError(where + ": compressed data is not supported");
  }
  {
    std::istringstream is(need("DimSize"));
    Index x = 0, y = 0, z = 0;
    if (!(is >> x >> y >> z) || x < 1 || y < 1 || z < 1) throw MetaImageError(where + ": bad DimSize");
    h.extent = {z, y, x};
  }
  if (kv.count("ElementSpacing")) h.spacing = parse_vec3("ElementSpacing", kv["ElementSpacing"]);
  else if (kv.count("ElementSize")) h.spacing = parse_vec3("ElementSize", kv["ElementSize"]);
  else throw MetaImageError(where + ": missing header key ElementSpacing");
  if ((h.spacing.array() <= 0).any()) throw MetaImageError(where + ": spacing must be positive");
  for (const char* key : {"Offset", "Origin", "Position"}) {
    if (kv.count(key)) {
      h.origin = parse_vec3(key, kv[key]);
      break;
    }
  }
  h.element_type = parse_element_type(need("ElementType"));
  for (const char* key : {"BinaryDataByteOrderMSB", "ElementByteOrderMSB"}) {
    if (kv.count(key)) h.msb = parse_bool(key, kv[key]);
  }
  h.data_file = need("ElementDataFile");
  out.data_offset = data_offset;
  return out;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MetaImageError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
T decode(const char* p, bool msb) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, p, sizeof(T));
  if (msb != (std::endian::native == std::endian::big)) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

template <typename T>
void encode_le(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

}  // namespace

const char* to_string(ElementType type) {
  switch (type) {
    case ElementType::Short: return "MET_SHORT";
    case ElementType::UChar: return "MET_UCHAR";
    case ElementType::Float: return "MET_FLOAT";
  }
  return "?";
}

MetaImageHeader read_metaimage_header(const std::filesystem::path& header_path) {
  return parse_header(slurp(header_path), header_path.string()).header;
}

template <typename T>
Volume<T> read_metaimage(const std::filesystem::path& header_path) {
  const std::string text = slurp(header_path);
  const ParsedHeader parsed = parse_header(text, header_path.string());
  const MetaImageHeader& h = parsed.header;
  if (h.element_type != element_type_of<T>()) {
    throw MetaImageError(header_path.string() + ": element type is " + to_string(h.element_type) + ", expected " +
                         to_string(element_type_of<T>()));
  }
  std::string local;
  const std::string* bytes = nullptr;
  std::size_t start = 0;
  std::filesystem::path raw_path;
  if (h.data_file == "LOCAL") {
    bytes = &text;
    start = parsed.data_offset;
    raw_path = header_path;
  } else {
    raw_path = header_path.parent_path() / h.data_file;
    local = slurp(raw_path);
    bytes = &local;
  }
  const std::size_t expected = static_cast<std::size_t>(h.extent.volume()) * sizeof(T);
  const std::size_t actual = bytes->size() - start;
  if (actual != expected) {
    throw MetaImageError(raw_path.string() + ": header promises " + std::to_string(expected) + " bytes, found " +
                         std::to_string(actual));
  }
  Volume<T> v(h.extent);
  v.spacing = h.spacing;
  v.origin = h.origin;
  const char* p = bytes->data() + start;
  for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = decode<T>(p + i * sizeof(T), h.msb);
  return v;
}

template <typename T>
void write_metaimage(const std::filesystem::path& header_path, const Volume<T>& volume) {
  if (volume.voxels.size() != static_cast<std::size_t>(volume.extent.volume())) {
    throw MetaImageError("volume storage does not match its extent");
  }
  std::filesystem::path raw_path = header_path;
  raw_path.replace_extension(".raw");
  std::ostringstream hdr;
  hdr.precision(17);
  hdr << "ObjectType = Image\n"
      << "NDims = 3\n"
      << "BinaryData = True\n"
      << "BinaryDataByteOrderMSB = False\n"
      << "CompressedData = False\n"
      << "Offset = " << volume.origin.x() << ' ' << volume.origin.y() << ' ' << volume.origin.z() << '\n'
      << "ElementSpacing = " << volume.spacing.x() << ' ' << volume.spacing.y() << ' ' << volume.spacing.z() << '\n'
      << "DimSize = " << volume.extent.x << ' ' << volume.extent.y << ' ' << volume.extent.z << '\n'
      << "ElementType = " << to_string(element_type_of<T>()) << '\n'
      << "ElementDataFile = " << raw_path.filename().string() << '\n';
  std::string raw;
  raw.reserve(volume.voxels.size() * sizeof(T));
  for (const T& v : volume.voxels) encode_le(raw, v);

  std::ofstream h(header_path, std::ios::binary);
  std::ofstream r(raw_path, std::ios::binary);
  if (!h || !r) throw MetaImageError("cannot write '" + header_path.string() + "'");
  h << hdr.str();
  r.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!h || !r) throw MetaImageError("failed writing '" + header_path.string() + "'");
}

CtScan read_ct_scan(const std::filesystem::path& header_path) {
  return {header_path.stem().string(), read_metaimage<std::int16_t>(header_path)};
}

template Volume<std::int16_t> read_metaimage(const std::filesystem::path&);
template Volume<std::uint8_t> read_metaimage(const std::filesystem::path&);
template Volume<float> read_metaimage(const std::filesystem::path&);
template void write_metaimage(const std::filesystem::path&, const Volume<std::int16_t>&);
template void write_metaimage(const std::filesystem::path&, const Volume<std::uint8_t>&);
template void write_metaimage(const std::filesystem::path&, const Volume<float>&);

}  // namespace ndk::ct
