#include "ssam/encoders.hpp"

#include <cmath>

#include "ssam/binary_io.hpp"
#include "ssam/checksum.hpp"
#include "ssam/rng.hpp"

namespace ssam {

Image::Image(int channels, int height, int width)
    : Image(channels, height, width, Matrix::Zero(channels, height * width)) {}

Image::Image(int channels, int height, int width, Matrix pixels)
    : channels_(channels), height_(height), width_(width), pixels_(std::move(pixels)) {
  if (channels <= 0 || height <= 0 || width <= 0) {
    throw ConfigError("image dimensions must be positive");
  }
  if (pixels_.rows() != channels || pixels_.cols() != height * width) {
    throw DimensionError("image pixels are " + shape_string(pixels_.rows(), pixels_.cols()) +
                         ", expected " + shape_string(channels, height * width));
  }
  require_finite(pixels_, "image");
}

Matrix extract_patches(const Image& img, int patch) {
  if (patch <= 0 || img.height() % patch != 0 || img.width() % patch != 0) {
    throw ConfigError("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                      " is not divisible into " + std::to_string(patch) + "x" +
                      std::to_string(patch) + " patches");
  }
  const int grid_rows = img.height() / patch;
  const int grid_cols = img.width() / patch;
  Matrix out(grid_rows * grid_cols, img.channels() * patch * patch);
  for (int gr = 0; gr < grid_rows; ++gr) {
    for (int gc = 0; gc < grid_cols; ++gc) {
      const int row = gr * grid_cols + gc;
      int col = 0;
      for (int c = 0; c < img.channels(); ++c) {
        for (int dy = 0; dy < patch; ++dy) {
          for (int dx = 0; dx < patch; ++dx) {
            out(row, col++) = img.at(c, gr * patch + dy, gc * patch + dx);
          }
        }
      }
    }
  }
  return out;
}

Matrix apply_adapter_vit(const Matrix& patches, const AdapterParams& adapter) {
  if (patches.rows() != adapter.tokens.rows() || patches.cols() != adapter.tokens.cols()) {
    throw DimensionError("apply_adapter_vit: patches " +
                         shape_string(patches.rows(), patches.cols()) + " vs adapter " +
                         shape_string(adapter.tokens.rows(), adapter.tokens.cols()));
  }
  return patches + adapter.tokens;
}

Var apply_adapter_vit(Var patches, Var adapter) { return ad::add(patches, adapter); }

Matrix tile_selector(int height, int width, int tile) {
  if (tile <= 0 || height % tile != 0 || width % tile != 0) {
    throw ConfigError("feature map " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by tile " + std::to_string(tile));
  }
  const int tiles_per_row = width / tile;
  Matrix g = Matrix::Zero(height * width, (height / tile) * tiles_per_row);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      g(y * width + x, (y / tile) * tiles_per_row + x / tile) = 1.0;
    }
  }
  return g;
}

Matrix apply_adapter_conv(const Matrix& featmap, int height, int width,
                          const AdapterParams& adapter, int tile) {
  const Matrix g = tile_selector(height, width, tile);
  if (featmap.rows() != g.rows() || adapter.tokens.rows() != g.cols() ||
      adapter.tokens.cols() != featmap.cols()) {
    throw DimensionError("apply_adapter_conv: map " + shape_string(featmap.rows(), featmap.cols()) +
                         ", adapter " + shape_string(adapter.tokens.rows(), adapter.tokens.cols()) +
                         ", tiles " + std::to_string(g.cols()));
  }
  return featmap + g * adapter.tokens;
}

Var apply_adapter_conv(Var featmap, int height, int width, Var adapter, int tile) {
  const Var g = featmap.tape().constant(tile_selector(height, width, tile));
  return ad::add(featmap, ad::matmul(g, adapter));
}

// ---------------------------------------------------------------------------

RowVector ImageEncoder::encode(const Image& img, const AdapterParams& adapter) const {
  Tape tape;
  return encode(img, tape.constant(adapter.tokens)).value().row(0);
}

Var ImageEncoder::encode_batch(std::span<const Image> images, Var adapter) const {
  std::vector<Var> rows;
  rows.reserve(images.size());
  for (const Image& img : images) rows.push_back(encode(img, adapter));
  return ad::vstack(rows);
}

Matrix ImageEncoder::encode_batch(std::span<const Image> images,
                                  const AdapterParams& adapter) const {
  Matrix out(static_cast<Eigen::Index>(images.size()), feature_dim());
  Tape tape;
  const Var a = tape.constant(adapter.tokens);
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = encode(images[i], a).value().row(0);
  }
  return out;
}

std::string ImageEncoder::weights_checksum() const {
  std::string joined;
  for (const Matrix& w : weights()) joined += matrix_checksum(w);
  return sha256_hex(std::as_bytes(std::span(joined.data(), joined.size())));
}

void ImageEncoder::check_image(const Image& img) const {
  if (img.channels() != channels() || img.height() != height() || img.width() != width()) {
    throw DimensionError(name() + " encoder expects " + std::to_string(channels()) + "x" +
                         std::to_string(height()) + "x" + std::to_string(width()) +
                         " images, got " + std::to_string(img.channels()) + "x" +
                         std::to_string(img.height()) + "x" + std::to_string(img.width()));
  }
}

void ImageEncoder::check_adapter(const Matrix& tokens) const {
  if (tokens.rows() != adapter_count() || tokens.cols() != feature_dim()) {
    throw DimensionError(name() + " encoder expects a " +
                         shape_string(adapter_count(), feature_dim()) + " adapter, got " +
                         shape_string(tokens.rows(), tokens.cols()));
  }
}

// ---------------------------------------------------------------------------

VitEncoder::VitEncoder(const VitConfig& config) : config_(config) {
  if (config.channels <= 0 || config.dim < 1 || config.blocks < 1 || config.patch <= 0) {
    throw ConfigError("vit: channels, dim, blocks and patch must be positive");
  }
  if (config.height % config.patch != 0 || config.width % config.patch != 0) {
    throw ConfigError("vit: image " + std::to_string(config.height) + "x" +
                      std::to_string(config.width) + " not divisible by patch " +
                      std::to_string(config.patch));
  }
  if (config.insertion_layer < 0 || config.insertion_layer > config.blocks) {
    throw ConfigError("vit: insertion layer " + std::to_string(config.insertion_layer) +
                      " outside [0, " + std::to_string(config.blocks) + "]");
  }
  if (!(config.embed_scale > 0.0) || !(config.output_scale > 0.0)) {
    throw ConfigError("vit: scales must be positive");
  }
  Rng rng(derive_seed(config.seed, 0x7669));
  const int patch_dim = config.channels * config.patch * config.patch;
  const double d = config.dim;
  embedding_ = rng.normal_matrix(patch_dim, config.dim, config.embed_scale / std::sqrt(patch_dim));
  for (int b = 0; b < config.blocks; ++b) {
    Block block;
    block.query = rng.normal_matrix(config.dim, config.dim, 1.0 / std::sqrt(d));
    block.key = rng.normal_matrix(config.dim, config.dim, 1.0 / std::sqrt(d));
    block.value = rng.normal_matrix(config.dim, config.dim, 1.0 / std::sqrt(d));
    block.out = rng.normal_matrix(config.dim, config.dim, 1.0 / std::sqrt(d));
    block.hidden = rng.normal_matrix(config.dim, config.dim, 1.0 / std::sqrt(d));
    block.hidden_bias = rng.normal_matrix(1, config.dim, 0.1);
    block.proj = rng.normal_matrix(config.dim, config.dim, 1.0 / std::sqrt(d));
    block.input_gain = b == 0 ? 1.0 / config.embed_scale : 1.0;
    blocks_.push_back(std::move(block));
  }
}

Eigen::Index VitEncoder::adapter_count() const {
  return static_cast<Eigen::Index>(config_.height / config_.patch) * (config_.width / config_.patch);
}

Matrix VitEncoder::patch_embeddings(const Image& img) const {
  check_image(img);
  return extract_patches(img, config_.patch) * embedding_;
}

VitEncoder VitEncoder::with_insertion_layer(int layer) const {
  VitConfig c = config_;
  c.insertion_layer = layer;
  return VitEncoder(c);
}

Var VitEncoder::run_block(const Block& block, Var tokens) const {
  Tape& t = tokens.tape();
  if (block.input_gain != 1.0) tokens = ad::scale(tokens, block.input_gain);

  const Var x = ad::row_center(tokens);
  const Var q = ad::matmul(x, t.constant(block.query));
  const Var k = ad::matmul(x, t.constant(block.key));
  const Var v = ad::matmul(x, t.constant(block.value));
  const Var logits = ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(config_.dim));
  const Var attended = ad::matmul(ad::matmul(ad::row_softmax(logits), v), t.constant(block.out));
  tokens = ad::add(tokens, attended);

  const Var y = ad::row_center(tokens);
  const Var hidden =
      ad::tanh(ad::add_row(ad::matmul(y, t.constant(block.hidden)), t.constant(block.hidden_bias)));
  return ad::add(tokens, ad::matmul(hidden, t.constant(block.proj)));
}

Var VitEncoder::encode(const Image& img, Var adapter) const {
  check_adapter(adapter.value());
  Tape& t = adapter.tape();
  Var tokens = t.constant(patch_embeddings(img));
  for (int b = 0; b < config_.blocks; ++b) {
    if (b == config_.insertion_layer) tokens = apply_adapter_vit(tokens, adapter);
    tokens = run_block(blocks_[static_cast<std::size_t>(b)], tokens);
  }
  if (config_.insertion_layer == config_.blocks) tokens = apply_adapter_vit(tokens, adapter);
  return ad::scale(ad::col_mean(tokens), config_.output_scale);
}

std::vector<Matrix> VitEncoder::weights() const {
  std::vector<Matrix> out{embedding_};
  for (const Block& b : blocks_) {
    out.insert(out.end(), {b.query, b.key, b.value, b.out, b.hidden, b.hidden_bias, b.proj,
                           Matrix::Constant(1, 1, b.input_gain)});
  }
  out.push_back(Matrix::Constant(1, 1, config_.output_scale));
  return out;
}

// ---------------------------------------------------------------------------

ConvEncoder::ConvEncoder(const ConvConfig& config) : config_(config) {
  if (config.channels <= 0 || config.dim < 1) {
    throw ConfigError("conv: channels and dim must be positive");
  }
  if (!(config.embed_scale > 0.0) || !(config.output_scale > 0.0)) {
    throw ConfigError("conv: scales must be positive");
  }
  selector_ = tile_selector(config.height, config.width, config.tile);
  Rng rng(derive_seed(config.seed, 0x636f6e76));
  const double fan1 = 9.0 * config.channels;
  const double fan = 9.0 * config.dim;
  conv1_ = rng.normal_matrix(9 * config.channels, config.dim, config.embed_scale / std::sqrt(fan1));
  bias1_ = rng.normal_matrix(1, config.dim, 0.1);
  conv2_ = rng.normal_matrix(9 * config.dim, config.dim, 1.0 / std::sqrt(fan));
  bias2_ = rng.normal_matrix(1, config.dim, 0.1);
  conv3_ = rng.normal_matrix(9 * config.dim, config.dim, 1.0 / std::sqrt(fan));
}

Eigen::Index ConvEncoder::adapter_count() const { return selector_.cols(); }

Matrix ConvEncoder::first_layer(const Image& img) const {
  check_image(img);
  Tape tape;
  const Var cols = ad::im2col3x3(tape.constant(img.spatial_major()), config_.height, config_.width);
  return cols.value() * conv1_;
}

Var ConvEncoder::encode(const Image& img, Var adapter) const {
  check_adapter(adapter.value());
  Tape& t = adapter.tape();
  const int h = config_.height;
  const int w = config_.width;
  const Var hidden = t.constant(first_layer(img));
  const Var adapted = ad::add(hidden, ad::matmul(t.constant(selector_), adapter));
  const Var a1 = ad::tanh(ad::add_row(ad::scale(adapted, 1.0 / config_.embed_scale), t.constant(bias1_)));
  const Var a2 = ad::tanh(
      ad::add_row(ad::matmul(ad::im2col3x3(a1, h, w), t.constant(conv2_)), t.constant(bias2_)));
  const Var a3 = ad::matmul(ad::im2col3x3(a2, h, w), t.constant(conv3_));
  return ad::scale(ad::col_mean(a3), config_.output_scale);
}

std::vector<Matrix> ConvEncoder::weights() const {
  return {conv1_, bias1_, conv2_, bias2_, conv3_, Matrix::Constant(1, 1, config_.embed_scale),
          Matrix::Constant(1, 1, config_.output_scale)};
}

// ---------------------------------------------------------------------------

CategoryEmbeddings::CategoryEmbeddings(Matrix rows, EmbeddingSource source)
    : rows_(std::move(rows)), source_(source) {
  if (rows_.rows() < 2) throw ConfigError("category embeddings need at least 2 categories");
  if (rows_.cols() < 1) throw ConfigError("category embeddings need a positive dimension");
  require_finite(rows_, "category_embeddings");
  const Vector norms = checked_row_norms(rows_, "category_embeddings");
  rows_.array().colwise() /= norms.array();
}

std::string CategoryEmbeddings::checksum() const { return matrix_checksum(rows_); }

std::vector<std::byte> CategoryEmbeddings::serialize() const {
  ByteWriter w;
  w.magic("SSAMEMB1");
  w.u32(static_cast<std::uint32_t>(rows_.rows()));
  w.u32(static_cast<std::uint32_t>(rows_.cols()));
  for (Eigen::Index i = 0; i < rows_.size(); ++i) w.f32(static_cast<float>(rows_.data()[i]));
  return w.take();
}

CategoryEmbeddings CategoryEmbeddings::deserialize(std::span<const std::byte> bytes) {
  ByteReader r(bytes);
  r.expect_magic("SSAMEMB1");
  const std::uint32_t m = r.u32("M");
  const std::uint32_t d = r.u32("D");
  if (m < 2 || d < 1) throw FormatError(8, "invalid embedding shape " + shape_string(m, d));
  r.require_remaining(static_cast<std::size_t>(m) * d * sizeof(float), "embedding payload");
  Matrix rows(m, d);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = r.f32("embedding value");
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    if (!(rows.row(i).norm() > kZeroNormEpsilon)) {
      throw FormatError(16 + static_cast<std::size_t>(i) * d * sizeof(float),
                        "embedding row " + std::to_string(i) + " has zero norm");
    }
  }
  return CategoryEmbeddings(std::move(rows), EmbeddingSource::File);
}

void CategoryEmbeddings::save(const std::filesystem::path& path) const {
  write_file(path, serialize());
}

CategoryEmbeddings CategoryEmbeddings::load(const std::filesystem::path& path) {
  return deserialize(read_file(path));
}

CategoryEmbeddings embed_categories(Eigen::Index count, Eigen::Index dim, std::uint64_t seed) {
  if (count < 2 || dim < 2) throw ConfigError("embed_categories: need M >= 2 and D >= 2");
  if (count > dim) {
    throw ConfigError("embed_categories: cannot place " + std::to_string(count) +
                      " orthonormal rows in dimension " + std::to_string(dim));
  }
  Rng rng(derive_seed(seed, 0x656d62));
  for (int attempt = 0; attempt < 64; ++attempt) {
    const Matrix draw = rng.normal_matrix(dim, count);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(draw);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, count);
    Matrix rows = q.transpose();
    const Matrix gram = rows * rows.transpose();
    const double off = (gram - Matrix::Identity(count, count)).cwiseAbs().maxCoeff();
    if (rows.allFinite() && off < 0.5) return CategoryEmbeddings(rows, EmbeddingSource::SeededOrthonormal);
  }
  throw ConfigError("embed_categories: rejection sampling did not converge");
}

}  // namespace ssam
