#include "ndk/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace ndk {

namespace {

constexpr char kMagic[4] = {'N', 'D', 'K', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return std::bit_cast<float>(v);
  }
  std::string str(std::uint64_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::add(std::string name, Tensor<float> tensor) {
  if (contains(name)) throw CheckpointError("duplicate checkpoint entry '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(tensor));
}

bool Checkpoint::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.first == name; });
}

const Tensor<float>& Checkpoint::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw CheckpointError("checkpoint has no entry '" + name + "'");
}

Checkpoint Checkpoint::filtered(const std::string& prefix) const {
  Checkpoint out;
  for (const auto& [name, t] : entries_) {
    if (name.rfind(prefix, 0) == 0) out.entries_.emplace_back(name, t);
  }
  return out;
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic, 4);
  put_u64(out, entries_.size());
  for (const auto& [name, t] : entries_) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, static_cast<std::uint64_t>(t.rank()));
    for (Index e : t.shape()) put_u64(out, static_cast<std::uint64_t>(e));
    for (float v : t.values()) put_f32(out, v);
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic");
  Reader r(bytes);
  r.str(4);
  Checkpoint ck;
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u64());
    const std::uint64_t rank = r.u64();
    if (rank > 16) throw CheckpointError("implausible rank for '" + name + "'");
    Shape shape;
    for (std::uint64_t a = 0; a < rank; ++a) shape.push_back(static_cast<Index>(r.u64()));
    std::vector<float> values(static_cast<std::size_t>(shape_numel(shape)));
    for (float& v : values) v = r.f32();
    ck.add(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint records");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing '" + path.string() + "'");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

template <typename Scalar>
Checkpoint state_dict(Module<Scalar>& module) {
  StateCollector<Scalar> c;
  module.collect(c);
  Checkpoint ck;
  for (const auto* p : c.parameters) ck.add(p->name, p->value.value().template cast<float>());
  for (const auto& b : c.buffers) ck.add(b.name, b.tensor->template cast<float>());
  return ck;
}

template <typename Scalar>
std::size_t load_state_dict(Module<Scalar>& module, const Checkpoint& checkpoint, LoadMode mode) {
  StateCollector<Scalar> c;
  module.collect(c);
  std::set<std::string> used;
  std::size_t loaded = 0;
  auto assign = [&](const std::string& name, Tensor<Scalar>& dst) {
    if (!checkpoint.contains(name)) {
      if (mode == LoadMode::Strict) throw CheckpointError("checkpoint is missing '" + name + "'");
      return;
    }
    const Tensor<float>& src = checkpoint.get(name);
    if (src.shape() != dst.shape()) {
      throw CheckpointError("shape mismatch for '" + name + "': checkpoint " + shape_str(src.shape()) + ", model " +
                            shape_str(dst.shape()));
    }
    dst = src.template cast<Scalar>();
    used.insert(name);
    ++loaded;
  };
  for (auto* p : c.parameters) assign(p->name, p->value.mutable_value());
  for (auto& b : c.buffers) assign(b.name, *b.tensor);
  if (mode == LoadMode::Strict && used.size() != checkpoint.size()) {
    for (const auto& [name, t] : checkpoint.entries()) {
      if (!used.count(name)) throw CheckpointError("checkpoint entry '" + name + "' does not belong to the model");
    }
  }
  return loaded;
}

template Checkpoint state_dict(Module<float>&);
template Checkpoint state_dict(Module<double>&);
template std::size_t load_state_dict(Module<float>&, const Checkpoint&, LoadMode);
template std::size_t load_state_dict(Module<double>&, const Checkpoint&, LoadMode);

}  // namespace ndk
