#include "dsva/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "dsva/errors.hpp"

namespace dsva {

namespace {
std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> t{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k)
      c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}
}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t seed) {
  static const auto table = make_crc_table();
  std::uint32_t c = seed ^ 0xFFFFFFFFu;
  for (std::uint8_t b : bytes) c = table[(c ^ b) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void ParamRegistry::add(std::string name, Tensor t) {
  if (!t.defined()) throw ContractError("registry: undefined tensor " + name);
  if (index_.count(name))
    throw ContractError("registry: duplicate parameter '" + name + "'");
  index_.emplace(name, items_.size());
  items_.emplace_back(std::move(name), std::move(t));
}

Tensor& ParamRegistry::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw ContractError("registry: no parameter '" + name + "'");
  return items_[it->second].second;
}

bool ParamRegistry::has(const std::string& name) const {
  return index_.count(name) > 0;
}

std::vector<Tensor> ParamRegistry::tensors(const std::string& prefix) const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : items_)
    if (name.rfind(prefix, 0) == 0) out.push_back(t);
  return out;
}

std::uint32_t ParamRegistry::checksum(const std::string& prefix) const {
  std::uint32_t c = 0;
  for (const auto& [name, t] : items_) {
    if (name.rfind(prefix, 0) != 0) continue;
    c = crc32(std::span<const std::uint8_t>(
                  reinterpret_cast<const std::uint8_t*>(t.data().data()),
                  t.size() * sizeof(double)),
              c);
  }
  return c;
}

namespace {
constexpr char kMagic[] = "DSVA-CKPT";
constexpr std::size_t kMagicLen = 9;
constexpr std::uint32_t kVersion = 1;

void append(std::vector<std::uint8_t>& buf, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  buf.insert(buf.end(), b, b + n);
}

template <typename T>
void append_val(std::vector<std::uint8_t>& buf, T v) {
  append(buf, &v, sizeof v);
}
}  // namespace

void save_checkpoint(const ParamRegistry& reg, const std::string& path) {
  std::vector<std::uint8_t> buf;
  append(buf, kMagic, kMagicLen);
  append_val(buf, kVersion);
  append_val(buf, static_cast<std::uint32_t>(reg.items().size()));
  for (const auto& [name, t] : reg.items()) {
    append_val(buf, static_cast<std::uint32_t>(name.size()));
    append(buf, name.data(), name.size());
    append_val(buf, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape())
      append_val(buf, static_cast<std::uint32_t>(d));
    append(buf, t.data().data(), t.size() * sizeof(double));
  }
  append_val(buf, crc32(buf));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  out.close();
  if (!out) throw IoError("write to '" + path + "' failed");
}

void load_checkpoint(ParamRegistry& reg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (buf.size() < kMagicLen + 12)
    throw FormatError("checkpoint too short", buf.size());
  if (std::memcmp(buf.data(), kMagic, kMagicLen) != 0)
    throw FormatError("bad checkpoint magic", 0);
  const std::uint32_t stored_crc =
      *reinterpret_cast<const std::uint32_t*>(buf.data() + buf.size() - 4);
  const std::uint32_t actual =
      crc32(std::span<const std::uint8_t>(buf.data(), buf.size() - 4));
  if (stored_crc != actual)
    throw FormatError("checkpoint CRC mismatch", buf.size() - 4);

  std::size_t off = kMagicLen;
  auto need = [&](std::size_t n, const char* what) {
    if (off + n > buf.size() - 4)
      throw FormatError(std::string("checkpoint truncated in ") + what, off);
  };
  auto get_u32 = [&](const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + off, 4);
    off += 4;
    return v;
  };
  const std::uint32_t version = get_u32("version");
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version", kMagicLen);
  const std::uint32_t count = get_u32("parameter count");
  std::size_t loaded = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32("name length");
    need(name_len, "name");
    std::string name(reinterpret_cast<const char*>(buf.data() + off),
                     name_len);
    off += name_len;
    const std::uint32_t rank = get_u32("rank");
    if (rank > 8) throw FormatError("implausible rank", off - 4);
    Shape shape(rank);
    for (auto& d : shape) d = get_u32("dim");
    const std::size_t n = numel(shape);
    need(n * sizeof(double), "payload");
    if (!reg.has(name))
      throw FormatError("checkpoint parameter '" + name +
                            "' not present in the model",
                        off);
    Tensor& t = reg.get(name);
    if (t.shape() != shape)
      throw FormatError("shape mismatch for '" + name + "': model " +
                            shape_str(t.shape()) + " vs file " +
                            shape_str(shape),
                        off);
    std::memcpy(t.data().data(), buf.data() + off, n * sizeof(double));
    off += n * sizeof(double);
    ++loaded;
  }
  if (off != buf.size() - 4)
    throw FormatError("trailing bytes in checkpoint", off);
  if (loaded != reg.items().size())
    throw FormatError("checkpoint holds " + std::to_string(loaded) +
                          " parameters, model expects " +
                          std::to_string(reg.items().size()),
                      off);
}

}  // namespace dsva
