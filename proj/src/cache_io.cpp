#include <array>
#include <bit>
#include <fstream>

#include "csrec/error.hpp"
#include "csrec/teacher.hpp"

namespace csrec::teacher {

namespace {

static_assert(std::endian::native == std::endian::little, "cache IO assumes little-endian");

constexpr std::array<char, 8> kMagic{'C', 'S', 'R', 'C', 'A', 'C', 'H', 'E'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error(ErrorKind::Io, path + ": truncated cache");
  return value;
}

std::array<unsigned char, 32> decode_hex(const std::string& hex) {
  if (hex.size() != 64) throw Error(ErrorKind::Parameter, "cache fingerprint must be 64 hex chars");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw Error(ErrorKind::Parameter, "cache fingerprint is not hex");
  };
  std::array<unsigned char, 32> out{};
  for (std::size_t i = 0; i < 32; ++i)
    out[i] = static_cast<unsigned char>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  return out;
}

std::string encode_hex(const std::array<unsigned char, 32>& raw) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (unsigned char b : raw) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

}  // namespace

void save_cache(const std::string& path, const SoftLogitCache& cache) {
  if (cache.entries.cols() != cache.num_items)
    throw Error(ErrorKind::Shape, "cache rows do not match |I|");
  const auto fp = decode_hex(cache.fingerprint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cache.provenance));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(cache.entries.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cache.num_items));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cache.teacher_count));
  out.write(reinterpret_cast<const char*>(fp.data()), fp.size());
  std::vector<float> row(static_cast<std::size_t>(cache.num_items));
  for (Eigen::Index r = 0; r < cache.entries.rows(); ++r) {
    for (Eigen::Index c = 0; c < cache.entries.cols(); ++c)
      row[static_cast<std::size_t>(c)] = static_cast<float>(cache.entries(r, c));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

SoftLogitCache load_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw Error(ErrorKind::Io, path + ": not a soft-logit cache");
  if (get<std::uint32_t>(in, path) != kVersion)
    throw Error(ErrorKind::Io, path + ": unsupported cache version");
  SoftLogitCache cache;
  const auto prov = get<std::uint32_t>(in, path);
  if (prov < 1 || prov > 4) throw Error(ErrorKind::Io, path + ": unknown provenance tag");
  cache.provenance = static_cast<Provenance>(prov);
  const auto rows = get<std::uint64_t>(in, path);
  cache.num_items = static_cast<int>(get<std::uint32_t>(in, path));
  cache.teacher_count = static_cast<int>(get<std::uint32_t>(in, path));
  std::array<unsigned char, 32> fp{};
  in.read(reinterpret_cast<char*>(fp.data()), fp.size());
  if (!in) throw Error(ErrorKind::Io, path + ": truncated cache");
  cache.fingerprint = encode_hex(fp);
  cache.entries.resize(static_cast<Eigen::Index>(rows), cache.num_items);
  std::vector<float> row(static_cast<std::size_t>(cache.num_items));
  for (Eigen::Index r = 0; r < cache.entries.rows(); ++r) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw Error(ErrorKind::Io, path + ": truncated cache");
    for (Eigen::Index c = 0; c < cache.entries.cols(); ++c)
      cache.entries(r, c) = static_cast<double>(row[static_cast<std::size_t>(c)]);
  }
  return cache;
}

}  // namespace csrec::teacher
