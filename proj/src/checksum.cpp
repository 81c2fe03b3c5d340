#include "ssam/checksum.hpp"

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <vector>

#include <openssl/sha.h>

namespace ssam {

std::string sha256_hex(std::span<const std::byte> bytes) {
  std::array<unsigned char, SHA256_DIGEST_LENGTH> digest{};
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest.data());
  std::string hex;
  hex.reserve(2 * digest.size());
  char buf[3];
  for (unsigned char b : digest) {
    std::snprintf(buf, sizeof(buf), "%02x", b);
    hex += buf;
  }
  return hex;
}

std::string matrix_checksum(const Matrix& m) {
  std::vector<std::byte> bytes(2 * sizeof(std::uint64_t) + m.size() * sizeof(double));
  const std::uint64_t shape[2] = {static_cast<std::uint64_t>(m.rows()),
                                  static_cast<std::uint64_t>(m.cols())};
  std::memcpy(bytes.data(), shape, sizeof(shape));
  if (m.size() > 0) std::memcpy(bytes.data() + sizeof(shape), m.data(), m.size() * sizeof(double));
  return sha256_hex(bytes);
}

}  // namespace ssam
