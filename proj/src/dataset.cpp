#include "ssam/dataset.hpp"

#include <cmath>

#include "ssam/binary_io.hpp"

namespace ssam {

void Dataset::validate() const {
  if (images.size() != labels.size()) throw ConfigError("dataset: image and label counts differ");
  if (num_classes < 2) throw ConfigError("dataset: need at least 2 classes");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    if (img.channels() != static_cast<int>(channels) || img.height() != static_cast<int>(height) ||
        img.width() != static_cast<int>(width)) {
      throw ConfigError("dataset: image " + std::to_string(i) + " has the wrong shape");
    }
    if (labels[i] >= num_classes) {
      throw ConfigError("dataset: label " + std::to_string(labels[i]) + " of image " +
                        std::to_string(i) + " exceeds class count");
    }
  }
}

std::vector<std::byte> serialize_dataset(const Dataset& ds) {
  ds.validate();
  ByteWriter w;
  w.magic("SSAMDS01");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(ds.channels);
  w.u32(ds.height);
  w.u32(ds.width);
  w.u32(ds.num_classes);
  for (const Image& img : ds.images) {
    const Matrix& px = img.pixels();
    for (Eigen::Index i = 0; i < px.size(); ++i) w.f32(static_cast<float>(px.data()[i]));
  }
  for (std::uint32_t label : ds.labels) w.u32(label);
  return w.take();
}

Dataset deserialize_dataset(std::span<const std::byte> bytes) {
  ByteReader r(bytes);
  r.expect_magic("SSAMDS01");
  const std::size_t version_offset = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion) {
    throw FormatError(version_offset, "unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  const std::uint32_t count = r.u32("count");
  ds.channels = r.u32("channels");
  ds.height = r.u32("height");
  ds.width = r.u32("width");
  const std::size_t classes_offset = r.offset();
  ds.num_classes = r.u32("num_classes");
  if (ds.channels == 0 || ds.height == 0 || ds.width == 0) {
    throw FormatError(16, "image dimensions must be positive");
  }
  if (ds.num_classes < 2) throw FormatError(classes_offset, "need at least 2 classes");
  const std::size_t per_image = static_cast<std::size_t>(ds.channels) * ds.height * ds.width;
  r.require_remaining(static_cast<std::size_t>(count) * (per_image * sizeof(float) + sizeof(std::uint32_t)),
                      "dataset payload");
  ds.images.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    Matrix px(ds.channels, static_cast<Eigen::Index>(ds.height) * ds.width);
    for (Eigen::Index i = 0; i < px.size(); ++i) {
      const std::size_t at = r.offset();
      px.data()[i] = r.f32("pixel");
      if (!std::isfinite(px.data()[i])) {
        throw FormatError(at, "non-finite pixel in image " + std::to_string(n));
      }
    }
    ds.images.emplace_back(static_cast<int>(ds.channels), static_cast<int>(ds.height),
                           static_cast<int>(ds.width), std::move(px));
  }
  ds.labels.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    const std::size_t at = r.offset();
    const std::uint32_t label = r.u32("label");
    if (label >= ds.num_classes) {
      throw FormatError(at, "label " + std::to_string(label) + " out of range");
    }
    ds.labels.push_back(label);
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_file(path, serialize_dataset(ds));
}

Dataset load_dataset(const std::filesystem::path& path) { return deserialize_dataset(read_file(path)); }

}  // namespace ssam
