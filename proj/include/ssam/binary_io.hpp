#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssam/errors.hpp"

namespace ssam {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts are not supported");

class ByteWriter {
 public:
  void magic(std::string_view tag) {
    for (char c : tag) bytes_.push_back(static_cast<std::byte>(c));
  }
  void u32(std::uint32_t v) { raw(&v, sizeof(v)); }
  void f32(float v) { raw(&v, sizeof(v)); }

  const std::vector<std::byte>& bytes() const { return bytes_; }
  std::vector<std::byte> take() { return std::move(bytes_); }

 private:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::byte> bytes_;
};

/// Cursor over a byte buffer; every failure reports the offset it happened at.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  void expect_magic(std::string_view tag) {
    require(tag.size(), "magic");
    if (std::memcmp(bytes_.data() + offset_, tag.data(), tag.size()) != 0) {
      throw FormatError(offset_, "bad magic, expected '" + std::string(tag) + "'");
    }
    offset_ += tag.size();
  }
  std::uint32_t u32(const char* field) {
    std::uint32_t v;
    read(&v, sizeof(v), field);
    return v;
  }
  float f32(const char* field) {
    float v;
    read(&v, sizeof(v), field);
    return v;
  }
  /// Throws unless exactly `count` more bytes remain.
  void require_remaining(std::size_t count, const char* what) const {
    if (remaining() != count) {
      throw FormatError(offset_, std::string(what) + ": expected " + std::to_string(count) +
                                     " more bytes (total length " +
                                     std::to_string(offset_ + count) + "), found " +
                                     std::to_string(remaining()) + " (total length " +
                                     std::to_string(bytes_.size()) + ")");
    }
  }
  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }

 private:
  void require(std::size_t n, const char* field) const {
    if (remaining() < n) {
      throw FormatError(offset_, std::string("truncated while reading ") + field + ": expected " +
                                     std::to_string(offset_ + n) + " bytes, file has " +
                                     std::to_string(bytes_.size()));
    }
  }
  void read(void* out, std::size_t n, const char* field) {
    require(n, field);
    std::memcpy(out, bytes_.data() + offset_, n);
    offset_ += n;
  }

  std::span<const std::byte> bytes_;
  std::size_t offset_ = 0;
};

std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace ssam
