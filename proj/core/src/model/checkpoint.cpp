#include "resee/model/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "resee/error.hpp"

namespace resee::model {
namespace {

constexpr std::string_view kModule = "model_core";
constexpr std::string_view kMagic = "RSCK";
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_str(std::string& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return std::string(raw(u32())); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw SchemaError(std::string(kModule), "checkpoint is truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic);
  put_u32(out, kVersion);
  put_str(out, ckpt.config.to_json());
  put_str(out, ckpt.vocabulary.to_json());
  const auto& p = ckpt.parameters;
  put_u32(out, static_cast<std::uint32_t>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    put_str(out, p.name(i));
    put_u32(out, static_cast<std::uint32_t>(p[i].rows));
    put_u32(out, static_cast<std::uint32_t>(p[i].cols));
    for (double v : p[i].data) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.raw(kMagic.size()) != kMagic) throw SchemaError(std::string(kModule), "not a checkpoint file");
  if (const auto v = r.u32(); v != kVersion) {
    throw VersionError(std::string(kModule), "checkpoint version " + std::to_string(v) + " is not supported");
  }
  Checkpoint c{ModelConfig::from_json(r.str()), Vocabulary::from_json(r.str()), {}};
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = r.str();
    const auto rows = r.u32();
    const auto cols = r.u32();
    Matrix m(rows, cols);
    for (auto& v : m.data) v = static_cast<double>(std::bit_cast<float>(r.u32()));
    c.parameters.add(std::move(name), std::move(m));
  }
  if (!r.done()) throw SchemaError(std::string(kModule), "trailing bytes after checkpoint tensors");
  if (c.vocabulary.size() != c.config.vocab_size) {
    throw SchemaError(std::string(kModule), "checkpoint vocabulary size does not match its config");
  }
  Model check(c.config, c.parameters);  // validates names and shapes
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(std::string(kModule), "cannot write " + tmp);
    const auto bytes = serialize_checkpoint(ckpt);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError(std::string(kModule), "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(std::string(kModule), "cannot read checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace resee::model
