#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssam/adaptation.hpp"
#include "ssam/dataset.hpp"
#include "ssam/encoders.hpp"

namespace ssam {

enum class ShiftKind { AdditiveBias, PixelNoise, ChannelRotation };
enum class EncoderKind { Vit, Conv };

std::string to_string(ShiftKind kind);
ShiftKind parse_shift_kind(const std::string& text);
std::string to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(const std::string& text);

/// Recipe for a synthetic test stream: per-class template images, per-sample noise,
/// and a pixel-space shift applied to every sample.
struct SyntheticShiftSpec {
  std::uint32_t num_classes = 4;
  std::uint32_t images_per_class = 128;
  std::uint32_t channels = 3;
  std::uint32_t height = 12;
  std::uint32_t width = 12;
  ShiftKind shift = ShiftKind::AdditiveBias;
  /// Bias scale, extra noise sigma, or rotation angle in radians, depending on `shift`.
  double shift_magnitude = 1.0;
  double sample_noise = 0.5;
  /// Clean samples per class used to place the category embeddings.
  std::uint32_t anchor_samples = 32;
  /// Templates are drawn from this seed when set, otherwise from the generation seed.
  std::optional<std::uint64_t> template_seed;

  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticShiftSpec& spec);
void from_json(const nlohmann::json& j, SyntheticShiftSpec& spec);

/// Encoder hyper-parameters shared by generation and adaptation.
struct EncoderSettings {
  EncoderKind kind = EncoderKind::Vit;
  int insertion_layer = 0;
  int dim = 16;
  int blocks = 3;
  int tile = 2;
  double embed_scale = 0.02;
  double output_scale = 0.01;
};

/// Largest patch side in {4, 3, 2, 1} that divides both image sides.
int default_patch(std::uint32_t height, std::uint32_t width);
std::unique_ptr<ImageEncoder> make_encoder(const EncoderSettings& settings, std::uint32_t channels,
                                           std::uint32_t height, std::uint32_t width,
                                           std::uint64_t seed);

/// A generated stream together with the category embeddings for each encoder family.
struct SyntheticBenchmark {
  SyntheticShiftSpec spec;
  std::uint64_t seed = 0;
  Dataset dataset;
  /// The same samples before the shift was applied.
  Dataset unshifted;
  CategoryEmbeddings vit_embeddings;
  CategoryEmbeddings conv_embeddings;
  double vit_unshifted_accuracy = 0.0;
  double vit_shifted_accuracy = 0.0;
  double conv_unshifted_accuracy = 0.0;
  double conv_shifted_accuracy = 0.0;

  const CategoryEmbeddings& embeddings(EncoderKind kind) const {
    return kind == EncoderKind::Vit ? vit_embeddings : conv_embeddings;
  }
};

/// Deterministic in (spec, seed). Category embeddings are the centred, normalized mean
/// frozen-encoder features of clean anchor samples. Throws GenerationQualityError when the
/// frozen ViT path classifies unshifted samples no better than 1/M + 0.05.
SyntheticBenchmark generate_dataset(const SyntheticShiftSpec& spec, std::uint64_t seed,
                                    const EncoderSettings& settings = {});

/// Writes `<path>` (dataset), `<path>.vit.emb`, `<path>.conv.emb` and `<path>.meta.json`.
void save_benchmark(const SyntheticBenchmark& bench, const std::filesystem::path& path);

/// Dataset plus the sidecar files written by save_benchmark.
struct LoadedBenchmark {
  Dataset dataset;
  std::uint64_t seed = 0;
  nlohmann::json meta;
  std::filesystem::path path;
  CategoryEmbeddings load_embeddings(EncoderKind kind) const;
};
LoadedBenchmark load_benchmark(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Reports

/// Mean cosine between features of true class i (rows) and category embedding j (columns).
Matrix class_similarity_heatmap(const Matrix& features, const std::vector<std::uint32_t>& labels,
                                const CategoryEmbeddings& categories);
/// Mean of the heatmap diagonal.
double mean_diagonal(const Matrix& heatmap);
/// 2-D PCA coordinates; each component's first nonzero loading is made positive.
Matrix pca_projection(const Matrix& features, int components = 2);
/// Mean pairwise distance between class centroids of L2-normalized features.
double centroid_dispersion(const Matrix& features, const std::vector<std::uint32_t>& labels,
                           std::uint32_t num_classes);

struct ExperimentResult {
  AdaptReport report;
  Matrix features_pre, features_post;
  Matrix heatmap_pre, heatmap_post;
  Matrix projection_pre, projection_post;
  double dispersion_pre = 0.0;
  double dispersion_post = 0.0;
};

ExperimentResult run_experiment(const ImageEncoder& encoder, const Dataset& dataset,
                                const CategoryEmbeddings& categories, const AdaptConfig& config);

/// CSV files: summary, loss_curve, heatmap_pre/post, projection_pre/post and, when
/// requested, per-image similarity_pre/post.
void write_experiment_report(const ExperimentResult& result, const Dataset& dataset,
                             const CategoryEmbeddings& categories, const AdaptConfig& config,
                             const std::filesystem::path& dir, bool per_image = false);

// ---------------------------------------------------------------------------
// Ablation

enum class LossMask { EntOnly, EntPir, EntCa, Full };
std::string to_string(LossMask mask);
LossMask parse_loss_mask(const std::string& text);

struct AblationCell {
  double alpha = 1.0;
  double beta = 1.0;
  LossMask mask = LossMask::Full;

  /// Effective weights after the mask: disabled terms get weight 0.
  double effective_alpha() const;
  double effective_beta() const;
};

/// Cartesian product of alphas x betas x masks, read from JSON
/// {"alpha": [...], "beta": [...], "masks": ["ent", "ent+pir", "ent+ca", "full"]}.
struct AblationGrid {
  std::vector<double> alphas{1.0};
  std::vector<double> betas{1.0};
  std::vector<LossMask> masks{LossMask::Full};

  std::vector<AblationCell> cells() const;
  static AblationGrid from_json(const nlohmann::json& j);
  static AblationGrid load(const std::filesystem::path& path);
};

/// One adaptation problem: an encoder, its categories and a labelled stream.
struct AblationInstance {
  const ImageEncoder* encoder = nullptr;
  const Dataset* dataset = nullptr;
  const CategoryEmbeddings* categories = nullptr;
  std::uint64_t seed = 0;
};

struct AblationRow {
  AblationCell cell;
  std::vector<double> pre;   ///< per instance
  std::vector<double> post;  ///< per instance
  double mean_pre = 0.0;
  double mean_post = 0.0;
};

/// Runs every grid cell on every instance. Cells run on up to `threads` workers
/// (SSAM_THREADS, else hardware concurrency, when 0); row order follows the grid.
std::vector<AblationRow> run_ablation(const std::vector<AblationInstance>& instances,
                                      const AblationGrid& grid, const AdaptConfig& base,
                                      unsigned threads = 0);
void write_ablation_report(const std::vector<AblationRow>& rows, const std::filesystem::path& dir);

/// Worker count from SSAM_THREADS, falling back to the hardware concurrency.
unsigned configured_threads();

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckOptions {
  std::uint64_t seed = 0;
  int instances = 20;
  int batch = 8;
  int classes = 4;
  int dim = 16;
  int channels = 3;
  int image_side = 6;  ///< 3x3 grid of 2x2 patches, and 3x3 tiles of side 2
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Test hook: perturb the analytic gradient of this component ("ent", "pir", "ca", "total").
  std::optional<std::string> corrupt_component;
};

struct GradcheckEntry {
  std::string encoder;  ///< e.g. "vit@0", "conv"
  std::string component;
  double max_relative_error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_relative_error = 0.0;
  bool passed = true;
  double seconds = 0.0;
};

GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace ssam
