#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace csrec {

// Incremental SHA-256; hex digests are used as fingerprints and manifest hashes.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const std::byte> bytes);
  Sha256& update(std::string_view text);
  template <typename T>
  Sha256& update_pod(const T& value) {
    return update(std::as_bytes(std::span<const T, 1>(&value, 1)));
  }
  std::string hex_digest();

 private:
  void* ctx_;
  bool finished_ = false;
};

std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::string& path);

std::uint64_t fnv1a64(std::string_view text) noexcept;
std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Stage/member seed expansion: splitmix64(base ^ fnv1a64(label)). Adding a new
// label never changes the seeds of existing labels.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label) noexcept;

}  // namespace csrec
