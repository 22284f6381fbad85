#include "ndk/cli/manifest.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace ndk::cli {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 init failed");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw std::runtime_error("SHA-256 update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) throw std::runtime_error("SHA-256 final failed");
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += kDigits[md[i] >> 4];
      out += kDigits[md[i] & 15];
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

RunManifest::RunManifest(std::string command, const std::string& canonical_config, std::uint64_t seed)
    : command_(std::move(command)), config_sha256_(sha256_hex(canonical_config)), seed_(seed) {}

void RunManifest::add_input(const std::string& name, const std::filesystem::path& path) {
  inputs_[name] = sha256_file(path);
}

void RunManifest::add_output(const std::filesystem::path& relative) { outputs_[relative.generic_string()] = relative; }

void RunManifest::set_value(const std::string& key, const std::string& value) { values_[key] = value; }

void RunManifest::write(const std::filesystem::path& dir) const {
  nlohmann::ordered_json j;
  j["command"] = command_;
  j["config_sha256"] = config_sha256_;
  j["seed"] = seed_;
  j["inputs"] = nlohmann::json::object();
  for (const auto& [name, sha] : inputs_) j["inputs"][name] = sha;
  j["outputs"] = nlohmann::json::object();
  for (const auto& [name, rel] : outputs_) j["outputs"][name] = sha256_file(dir / rel);
  j["values"] = nlohmann::json::object();
  for (const auto& [k, v] : values_) j["values"][k] = v;
  const auto path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace ndk::cli
