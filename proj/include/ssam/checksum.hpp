#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "ssam/numerics.hpp"

namespace ssam {

/// Lowercase hex SHA-256 of a byte range.
std::string sha256_hex(std::span<const std::byte> bytes);

/// SHA-256 over the raw little-endian float64 storage of a matrix, prefixed by its shape.
std::string matrix_checksum(const Matrix& m);

}  // namespace ssam
