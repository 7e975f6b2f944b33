#include "core/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "core/errors.hpp"

namespace convitac {

namespace {

constexpr char kMagic[4] = {'C', 'V', 'T', '1'};
constexpr std::uint8_t kDtypeF32 = 0;

void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void save_tensor(const std::string& path, const Tensor& t) {
  if (!t.defined()) throw ContractError("save_tensor: undefined tensor");
  if (t.rank() > 255) throw FormatError("save_tensor: rank exceeds format limit");
  std::string buf;
  buf.reserve(6 + 4 * t.rank() + 4 * t.size());
  buf.append(kMagic, 4);
  buf.push_back(static_cast<char>(kDtypeF32));
  buf.push_back(static_cast<char>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > 0xFFFFFFFFull) throw FormatError("save_tensor: dimension exceeds format limit");
    put_u32_le(buf, static_cast<std::uint32_t>(d));
  }
  for (float v : t.values()) put_u32_le(buf, std::bit_cast<std::uint32_t>(v));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 6 || std::memcmp(p, kMagic, 4) != 0) {
    throw FormatError("bad magic in tensor file: " + path);
  }
  if (p[4] != kDtypeF32) {
    throw FormatError("unsupported dtype " + std::to_string(p[4]) + " in " + path);
  }
  const std::size_t rank = p[5];
  const std::size_t header = 6 + 4 * rank;
  if (buf.size() < header) throw FormatError("truncated header in tensor file: " + path);

  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) shape[i] = get_u32_le(p + 6 + 4 * i);
  const std::size_t count = shape_numel(shape);
  if (buf.size() != header + 4 * count) {
    throw FormatError("truncated tensor file: " + path + " (expected " +
                      std::to_string(header + 4 * count) + " bytes, got " +
                      std::to_string(buf.size()) + ")");
  }
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    values[i] = std::bit_cast<float>(get_u32_le(p + header + 4 * i));
  }
  return Tensor::from(std::move(shape), std::move(values));
}

void write_metadata(const std::string& path, const Metadata& meta) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  for (const auto& [k, v] : meta) f << k << "=" << v << "\n";
  if (!f) throw IoError("write failed: " + path);
}

Metadata read_metadata(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  Metadata meta;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("bad metadata line in " + path + ": " + line);
    meta.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return meta;
}

std::string meta_get(const Metadata& meta, const std::string& key) {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  throw FormatError("missing metadata key: " + key);
}

std::string meta_get_or(const Metadata& meta, const std::string& key, const std::string& fallback) {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  return fallback;
}

}  // namespace convitac
