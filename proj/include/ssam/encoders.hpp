#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ssam/autodiff.hpp"
#include "ssam/numerics.hpp"

namespace ssam {

/// C x H x W image stored as a C x (H*W) matrix, row-major within each channel.
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width);
  Image(int channels, int height, int width, Matrix pixels);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }

  double& at(int c, int y, int x) { return pixels_(c, y * width_ + x); }
  double at(int c, int y, int x) const { return pixels_(c, y * width_ + x); }

  const Matrix& pixels() const { return pixels_; }
  Matrix& pixels() { return pixels_; }

  /// (H*W) x C layout used by the convolutional path.
  Matrix spatial_major() const { return pixels_.transpose(); }

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  Matrix pixels_;
};

/// The learnable adapter tokens a_1..a_N, one D-dimensional row each.
struct AdapterParams {
  Matrix tokens;

  static AdapterParams zeros(Eigen::Index count, Eigen::Index dim) {
    return AdapterParams{Matrix::Zero(count, dim)};
  }
  Eigen::Index count() const { return tokens.rows(); }
  Eigen::Index dim() const { return tokens.cols(); }
};

/// Raw non-overlapping patches in row-major grid order, each flattened as (c, dy, dx).
Matrix extract_patches(const Image& img, int patch);

/// q_i = p_i + a_i.
Matrix apply_adapter_vit(const Matrix& patches, const AdapterParams& adapter);
Var apply_adapter_vit(Var patches, Var adapter);

/// (H*W) x N selector that maps token i onto every position of the i-th s x s tile.
Matrix tile_selector(int height, int width, int tile);

/// Adds token i, replicated over an s x s tile, to the i-th tile of an (H*W) x D map.
Matrix apply_adapter_conv(const Matrix& featmap, int height, int width,
                          const AdapterParams& adapter, int tile);
Var apply_adapter_conv(Var featmap, int height, int width, Var adapter, int tile);

/// Frozen image encoder with an additive adapter injection point.
class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;

  virtual std::string name() const = 0;
  virtual Eigen::Index adapter_count() const = 0;
  virtual Eigen::Index feature_dim() const = 0;
  virtual int channels() const = 0;
  virtual int height() const = 0;
  virtual int width() const = 0;

  /// 1 x D feature of `img` recorded on the adapter's tape.
  virtual Var encode(const Image& img, Var adapter) const = 0;

  /// Every frozen weight, flattened in a fixed order.
  virtual std::vector<Matrix> weights() const = 0;

  AdapterParams zero_adapter() const { return AdapterParams::zeros(adapter_count(), feature_dim()); }

  RowVector encode(const Image& img, const AdapterParams& adapter) const;
  /// |B| x D features, one row per image.
  Var encode_batch(std::span<const Image> images, Var adapter) const;
  Matrix encode_batch(std::span<const Image> images, const AdapterParams& adapter) const;

  /// SHA-256 of the serialized frozen weights.
  std::string weights_checksum() const;

  void check_image(const Image& img) const;
  void check_adapter(const Matrix& tokens) const;
};

struct VitConfig {
  int channels = 3;
  int height = 12;
  int width = 12;
  int patch = 4;
  int dim = 16;
  int blocks = 3;
  /// Adapter is added right before this block; `blocks` means after the last one.
  int insertion_layer = 0;
  /// Scale of the frozen patch embedding. The first block rescales by its inverse.
  double embed_scale = 0.02;
  double output_scale = 0.01;
  std::uint64_t seed = 0;
};

/// Miniature patch transformer: linear patch embedding, then blocks of mean-centred
/// single-head attention and a tanh MLP, each with a residual connection, then mean
/// pooling over tokens.
class VitEncoder final : public ImageEncoder {
 public:
  explicit VitEncoder(const VitConfig& config);

  std::string name() const override { return "vit"; }
  Eigen::Index adapter_count() const override;
  Eigen::Index feature_dim() const override { return config_.dim; }
  int channels() const override { return config_.channels; }
  int height() const override { return config_.height; }
  int width() const override { return config_.width; }

  using ImageEncoder::encode;
  Var encode(const Image& img, Var adapter) const override;
  std::vector<Matrix> weights() const override;

  /// N x D patch embeddings p_1..p_N.
  Matrix patch_embeddings(const Image& img) const;

  const VitConfig& config() const { return config_; }
  /// Same frozen weights, adapter injected before a different block.
  VitEncoder with_insertion_layer(int layer) const;

 private:
  struct Block {
    Matrix query, key, value, out, hidden, hidden_bias, proj;
    double input_gain = 1.0;
  };
  Var run_block(const Block& block, Var tokens) const;

  VitConfig config_;
  Matrix embedding_;
  std::vector<Block> blocks_;
};

struct ConvConfig {
  int channels = 3;
  int height = 12;
  int width = 12;
  int dim = 16;
  /// Side of the square tile that shares one adapter token.
  int tile = 2;
  /// Scale of the frozen first convolution. The next layer rescales by its inverse.
  double embed_scale = 0.02;
  double output_scale = 0.01;
  std::uint64_t seed = 0;
};

/// Miniature conv net: 3x3 conv, adapter tiling on its D x H x W output, then tanh,
/// two further 3x3 convs and global average pooling.
class ConvEncoder final : public ImageEncoder {
 public:
  explicit ConvEncoder(const ConvConfig& config);

  std::string name() const override { return "conv"; }
  Eigen::Index adapter_count() const override;
  Eigen::Index feature_dim() const override { return config_.dim; }
  int channels() const override { return config_.channels; }
  int height() const override { return config_.height; }
  int width() const override { return config_.width; }

  using ImageEncoder::encode;
  Var encode(const Image& img, Var adapter) const override;
  std::vector<Matrix> weights() const override;

  /// Output of the first convolution, (H*W) x D.
  Matrix first_layer(const Image& img) const;

  const ConvConfig& config() const { return config_; }

 private:
  ConvConfig config_;
  Matrix conv1_, bias1_, conv2_, bias2_, conv3_;
  Matrix selector_;
};

enum class EmbeddingSource { SeededOrthonormal, FromFeatures, File };

/// Fixed M x D category embedding matrix T with unit-norm rows.
class CategoryEmbeddings {
 public:
  /// Normalizes each row; throws on M < 2 or zero-norm rows.
  CategoryEmbeddings(Matrix rows, EmbeddingSource source);

  const Matrix& matrix() const { return rows_; }
  Eigen::Index count() const { return rows_.rows(); }
  Eigen::Index dim() const { return rows_.cols(); }
  EmbeddingSource source() const { return source_; }
  std::string checksum() const;

  /// Little-endian "SSAMEMB1", u32 M, u32 D, M*D float32 row-major.
  void save(const std::filesystem::path& path) const;
  static CategoryEmbeddings load(const std::filesystem::path& path);
  std::vector<std::byte> serialize() const;
  static CategoryEmbeddings deserialize(std::span<const std::byte> bytes);

 private:
  Matrix rows_;
  EmbeddingSource source_;
};

/// Seeded orthonormal rows (M <= D); pairwise |cos| < 0.5 is checked.
CategoryEmbeddings embed_categories(Eigen::Index count, Eigen::Index dim, std::uint64_t seed);

}  // namespace ssam
