#include "csrec/hashing.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>

#include "csrec/error.hpp"

namespace csrec {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Usage: return "usage error";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::EmptyInput: return "empty input";
    case ErrorKind::EmptyAfterFilter: return "empty after filter";
    case ErrorKind::Parameter: return "parameter error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Input: return "input error";
    case ErrorKind::Consistency: return "consistency error";
    case ErrorKind::Training: return "training error";
    case ErrorKind::Teacher: return "teacher error";
    case ErrorKind::Evaluation: return "evaluation error";
    case ErrorKind::UndefinedMetric: return "undefined metric";
    case ErrorKind::HandleMismatch: return "handle mismatch";
    case ErrorKind::StaleArtifact: return "stale artifact";
    case ErrorKind::Io: return "io error";
  }
  return "error";
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Usage:
    case ErrorKind::Parameter:
      return 1;
    case ErrorKind::Parse:
    case ErrorKind::EmptyInput:
    case ErrorKind::EmptyAfterFilter:
    case ErrorKind::Input:
    case ErrorKind::Shape:
    case ErrorKind::HandleMismatch:
    case ErrorKind::Io:
      return 2;
    case ErrorKind::Numeric:
    case ErrorKind::Training:
    case ErrorKind::Teacher:
    case ErrorKind::Consistency:
    case ErrorKind::StaleArtifact:
      return 3;
    case ErrorKind::Evaluation:
    case ErrorKind::UndefinedMetric:
      return 4;
  }
  return 1;
}

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr);
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

Sha256& Sha256::update(std::span<const std::byte> bytes) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), bytes.data(), bytes.size());
  return *this;
}

Sha256& Sha256::update(std::string_view text) {
  return update(std::as_bytes(std::span<const char>(text.data(), text.size())));
}

std::string Sha256::hex_digest() {
  if (finished_) throw Error(ErrorKind::Consistency, "sha256 digest requested twice");
  finished_ = true;
  std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[out[i] >> 4]);
    hex.push_back(kHex[out[i] & 0xF]);
  }
  return hex;
}

std::string sha256_hex(std::string_view text) { return Sha256().update(text).hex_digest(); }

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  Sha256 h;
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return h.hex_digest();
}

std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view label) noexcept {
  return splitmix64(base ^ fnv1a64(label));
}

}  // namespace csrec
