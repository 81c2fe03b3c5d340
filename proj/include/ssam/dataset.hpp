#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ssam/encoders.hpp"

namespace ssam {

/// Labelled image set. Labels are only consulted for accuracy, never for adaptation.
struct Dataset {
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t num_classes = 0;
  std::vector<Image> images;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return images.size(); }
  /// Throws ConfigError when shapes or labels are inconsistent.
  void validate() const;
};

inline constexpr std::uint32_t kDatasetVersion = 1;

/// "SSAMDS01", u32 version, u32 count, u32 C, u32 H, u32 W, u32 M, then count*C*H*W
/// float32 pixels and count u32 labels, all little-endian.
std::vector<std::byte> serialize_dataset(const Dataset& ds);
Dataset deserialize_dataset(std::span<const std::byte> bytes);

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace ssam
