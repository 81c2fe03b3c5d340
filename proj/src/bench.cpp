#include "ssam/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include "ssam/rng.hpp"

namespace ssam {

std::string to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::AdditiveBias: return "additive-bias";
    case ShiftKind::PixelNoise: return "pixel-noise";
    case ShiftKind::ChannelRotation: return "channel-rotation";
  }
  return "?";
}

ShiftKind parse_shift_kind(const std::string& text) {
  if (text == "additive-bias") return ShiftKind::AdditiveBias;
  if (text == "pixel-noise") return ShiftKind::PixelNoise;
  if (text == "channel-rotation") return ShiftKind::ChannelRotation;
  throw ConfigError("unknown shift kind '" + text + "'");
}

std::string to_string(EncoderKind kind) { return kind == EncoderKind::Vit ? "vit" : "conv"; }

EncoderKind parse_encoder_kind(const std::string& text) {
  if (text == "vit") return EncoderKind::Vit;
  if (text == "conv") return EncoderKind::Conv;
  throw ConfigError("unknown encoder '" + text + "'");
}

void SyntheticShiftSpec::validate() const {
  if (num_classes < 2) throw ConfigError("spec: num_classes must be at least 2");
  if (images_per_class < 1) throw ConfigError("spec: images_per_class must be positive");
  if (channels < 1 || height < 1 || width < 1) throw ConfigError("spec: image dims must be positive");
  if (shift == ShiftKind::ChannelRotation && channels < 2) {
    throw ConfigError("spec: channel rotation needs at least 2 channels");
  }
  if (!(shift_magnitude >= 0.0) || !(sample_noise >= 0.0)) {
    throw ConfigError("spec: magnitudes must be non-negative");
  }
  if (anchor_samples < 1) throw ConfigError("spec: anchor_samples must be positive");
}

void to_json(nlohmann::json& j, const SyntheticShiftSpec& spec) {
  j = nlohmann::json{{"num_classes", spec.num_classes},
                     {"images_per_class", spec.images_per_class},
                     {"channels", spec.channels},
                     {"height", spec.height},
                     {"width", spec.width},
                     {"shift", to_string(spec.shift)},
                     {"shift_magnitude", spec.shift_magnitude},
                     {"sample_noise", spec.sample_noise},
                     {"anchor_samples", spec.anchor_samples}};
  if (spec.template_seed) j["template_seed"] = *spec.template_seed;
}

void from_json(const nlohmann::json& j, SyntheticShiftSpec& spec) {
  const SyntheticShiftSpec defaults;
  spec.num_classes = j.value("num_classes", defaults.num_classes);
  spec.images_per_class = j.value("images_per_class", defaults.images_per_class);
  spec.channels = j.value("channels", defaults.channels);
  spec.height = j.value("height", defaults.height);
  spec.width = j.value("width", defaults.width);
  spec.shift = parse_shift_kind(j.value("shift", to_string(defaults.shift)));
  spec.shift_magnitude = j.value("shift_magnitude", defaults.shift_magnitude);
  spec.sample_noise = j.value("sample_noise", defaults.sample_noise);
  spec.anchor_samples = j.value("anchor_samples", defaults.anchor_samples);
  if (j.contains("template_seed")) spec.template_seed = j.at("template_seed").get<std::uint64_t>();
}

int default_patch(std::uint32_t height, std::uint32_t width) {
  for (int p : {4, 3, 2}) {
    if (height % p == 0 && width % p == 0) return p;
  }
  return 1;
}

std::unique_ptr<ImageEncoder> make_encoder(const EncoderSettings& settings, std::uint32_t channels,
                                           std::uint32_t height, std::uint32_t width,
                                           std::uint64_t seed) {
  if (settings.kind == EncoderKind::Vit) {
    VitConfig c;
    c.channels = static_cast<int>(channels);
    c.height = static_cast<int>(height);
    c.width = static_cast<int>(width);
    c.patch = default_patch(height, width);
    c.dim = settings.dim;
    c.blocks = settings.blocks;
    c.insertion_layer = settings.insertion_layer;
    c.embed_scale = settings.embed_scale;
    c.output_scale = settings.output_scale;
    c.seed = seed;
    return std::make_unique<VitEncoder>(c);
  }
  ConvConfig c;
  c.channels = static_cast<int>(channels);
  c.height = static_cast<int>(height);
  c.width = static_cast<int>(width);
  c.dim = settings.dim;
  c.tile = settings.tile;
  c.embed_scale = settings.embed_scale;
  c.output_scale = settings.output_scale;
  c.seed = seed;
  return std::make_unique<ConvEncoder>(c);
}

namespace {

Matrix apply_shift(const Matrix& pixels, const SyntheticShiftSpec& spec, const Matrix& bias,
                   Rng& noise) {
  Matrix out = pixels;
  switch (spec.shift) {
    case ShiftKind::AdditiveBias:
      out += spec.shift_magnitude * bias;
      break;
    case ShiftKind::PixelNoise:
      out += noise.normal_matrix(out.rows(), out.cols(), spec.shift_magnitude);
      break;
    case ShiftKind::ChannelRotation: {
      const double c = std::cos(spec.shift_magnitude);
      const double s = std::sin(spec.shift_magnitude);
      out.row(0) = c * pixels.row(0) - s * pixels.row(1);
      out.row(1) = s * pixels.row(0) + c * pixels.row(1);
      break;
    }
  }
  return out;
}

CategoryEmbeddings anchored_embeddings(const ImageEncoder& encoder, const std::vector<Image>& anchors,
                                       const std::vector<std::uint32_t>& anchor_labels,
                                       std::uint32_t num_classes) {
  const Matrix features = encoder.encode_batch(anchors, encoder.zero_adapter());
  Matrix means = Matrix::Zero(num_classes, features.cols());
  Vector counts = Vector::Zero(num_classes);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    means.row(anchor_labels[i]) += features.row(static_cast<Eigen::Index>(i));
    counts(anchor_labels[i]) += 1.0;
  }
  means.array().colwise() /= counts.array();
  const RowVector center = means.colwise().mean();
  means.rowwise() -= center;
  return CategoryEmbeddings(std::move(means), EmbeddingSource::FromFeatures);
}

}  // namespace

SyntheticBenchmark generate_dataset(const SyntheticShiftSpec& spec, std::uint64_t seed,
                                    const EncoderSettings& settings) {
  spec.validate();
  const std::uint64_t template_seed = spec.template_seed.value_or(seed);
  const int c = static_cast<int>(spec.channels);
  const int h = static_cast<int>(spec.height);
  const int w = static_cast<int>(spec.width);
  const Eigen::Index pixels = static_cast<Eigen::Index>(h) * w;

  Rng template_rng(derive_seed(template_seed, 1));
  std::vector<Matrix> templates;
  for (std::uint32_t k = 0; k < spec.num_classes; ++k) templates.push_back(template_rng.normal_matrix(c, pixels));

  Rng sample_rng(derive_seed(seed, 2));
  Rng shift_rng(derive_seed(seed, 3));
  Rng anchor_rng(derive_seed(seed, 4));
  Rng order_rng(derive_seed(seed, 5));
  const Matrix bias = shift_rng.normal_matrix(c, pixels);

  const std::size_t count = static_cast<std::size_t>(spec.num_classes) * spec.images_per_class;
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);

  SyntheticBenchmark out{spec,
                         seed,
                         Dataset{},
                         Dataset{},
                         CategoryEmbeddings(Matrix::Identity(2, 2), EmbeddingSource::FromFeatures),
                         CategoryEmbeddings(Matrix::Identity(2, 2), EmbeddingSource::FromFeatures)};
  for (Dataset* ds : {&out.dataset, &out.unshifted}) {
    ds->channels = spec.channels;
    ds->height = spec.height;
    ds->width = spec.width;
    ds->num_classes = spec.num_classes;
  }
  std::vector<Image> clean(count);
  std::vector<std::uint32_t> labels(count);
  for (std::size_t n = 0; n < count; ++n) {
    const auto label = static_cast<std::uint32_t>(n / spec.images_per_class);
    labels[n] = label;
    clean[n] = Image(c, h, w, templates[label] + sample_rng.normal_matrix(c, pixels, spec.sample_noise));
  }
  for (std::size_t slot = 0; slot < count; ++slot) {
    const std::size_t n = order[slot];
    out.unshifted.images.push_back(clean[n]);
    out.unshifted.labels.push_back(labels[n]);
    out.dataset.images.emplace_back(c, h, w, apply_shift(clean[n].pixels(), spec, bias, shift_rng));
    out.dataset.labels.push_back(labels[n]);
  }

  std::vector<Image> anchors;
  std::vector<std::uint32_t> anchor_labels;
  for (std::uint32_t k = 0; k < spec.num_classes; ++k) {
    for (std::uint32_t a = 0; a < spec.anchor_samples; ++a) {
      anchors.emplace_back(c, h, w, templates[k] + anchor_rng.normal_matrix(c, pixels, spec.sample_noise));
      anchor_labels.push_back(k);
    }
  }

  EncoderSettings vit = settings;
  vit.kind = EncoderKind::Vit;
  vit.insertion_layer = 0;
  EncoderSettings conv = settings;
  conv.kind = EncoderKind::Conv;
  const auto vit_encoder = make_encoder(vit, spec.channels, spec.height, spec.width, seed);
  const auto conv_encoder = make_encoder(conv, spec.channels, spec.height, spec.width, seed);
  out.vit_embeddings = anchored_embeddings(*vit_encoder, anchors, anchor_labels, spec.num_classes);
  out.conv_embeddings = anchored_embeddings(*conv_encoder, anchors, anchor_labels, spec.num_classes);

  const AdapterParams vit_zero = vit_encoder->zero_adapter();
  const AdapterParams conv_zero = conv_encoder->zero_adapter();
  out.vit_unshifted_accuracy = evaluate(*vit_encoder, out.unshifted, vit_zero, out.vit_embeddings);
  out.vit_shifted_accuracy = evaluate(*vit_encoder, out.dataset, vit_zero, out.vit_embeddings);
  out.conv_unshifted_accuracy = evaluate(*conv_encoder, out.unshifted, conv_zero, out.conv_embeddings);
  out.conv_shifted_accuracy = evaluate(*conv_encoder, out.dataset, conv_zero, out.conv_embeddings);

  const double floor = 1.0 / spec.num_classes + 0.05;
  if (out.vit_unshifted_accuracy <= floor) {
    throw GenerationQualityError("frozen encoder separates unshifted samples at only " +
                                 std::to_string(out.vit_unshifted_accuracy) +
                                 " accuracy (needs > " + std::to_string(floor) +
                                 "); lower sample_noise");
  }
  return out;
}

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& path, const std::string& suffix) {
  return std::filesystem::path(path.string() + suffix);
}

}  // namespace

void save_benchmark(const SyntheticBenchmark& bench, const std::filesystem::path& path) {
  save_dataset(bench.dataset, path);
  bench.vit_embeddings.save(with_suffix(path, ".vit.emb"));
  bench.conv_embeddings.save(with_suffix(path, ".conv.emb"));
  nlohmann::json meta;
  meta["seed"] = bench.seed;
  meta["spec"] = bench.spec;
  meta["embeddings"] = {{"vit", path.filename().string() + ".vit.emb"},
                        {"conv", path.filename().string() + ".conv.emb"}};
  meta["frozen_accuracy"] = {{"vit", {{"unshifted", bench.vit_unshifted_accuracy},
                                      {"shifted", bench.vit_shifted_accuracy}}},
                             {"conv", {{"unshifted", bench.conv_unshifted_accuracy},
                                       {"shifted", bench.conv_shifted_accuracy}}}};
  std::ofstream out(with_suffix(path, ".meta.json"));
  if (!out) throw ConfigError("cannot write metadata next to " + path.string());
  out << meta.dump(2) << "\n";
}

CategoryEmbeddings LoadedBenchmark::load_embeddings(EncoderKind kind) const {
  return CategoryEmbeddings::load(with_suffix(path, kind == EncoderKind::Vit ? ".vit.emb" : ".conv.emb"));
}

LoadedBenchmark load_benchmark(const std::filesystem::path& path) {
  LoadedBenchmark out{load_dataset(path), 0, {}, path};
  const auto meta_path = with_suffix(path, ".meta.json");
  std::ifstream in(meta_path);
  if (!in) throw ConfigError("missing metadata file " + meta_path.string());
  try {
    out.meta = nlohmann::json::parse(in);
    out.seed = out.meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad metadata " + meta_path.string() + ": " + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------

Matrix class_similarity_heatmap(const Matrix& features, const std::vector<std::uint32_t>& labels,
                                const CategoryEmbeddings& categories) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw DimensionError("heatmap: feature and label counts differ");
  }
  const Matrix sims = cosine_similarity_matrix(features, categories.matrix());
  const Eigen::Index m = categories.count();
  Matrix heat = Matrix::Zero(m, m);
  Vector counts = Vector::Zero(m);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    heat.row(labels[i]) += sims.row(static_cast<Eigen::Index>(i));
    counts(labels[i]) += 1.0;
  }
  for (Eigen::Index k = 0; k < m; ++k) {
    if (counts(k) > 0) heat.row(k) /= counts(k);
  }
  return heat;
}

double mean_diagonal(const Matrix& heatmap) { return heatmap.diagonal().mean(); }

Matrix pca_projection(const Matrix& features, int components) {
  if (features.rows() == 0) return Matrix(0, components);
  Matrix centered = features;
  centered.rowwise() -= features.colwise().mean();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / std::max<double>(1.0, features.rows() - 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const Eigen::Index d = features.cols();
  const int k = static_cast<int>(std::min<Eigen::Index>(components, d));
  Matrix loadings(d, components);
  loadings.setZero();
  for (int c = 0; c < k; ++c) {
    Vector v = solver.eigenvectors().col(d - 1 - c);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (std::abs(v(i)) > 1e-12) {
        if (v(i) < 0) v = -v;
        break;
      }
    }
    loadings.col(c) = v;
  }
  return centered * loadings;
}

double centroid_dispersion(const Matrix& features, const std::vector<std::uint32_t>& labels,
                           std::uint32_t num_classes) {
  Matrix unit = features;
  unit.array().colwise() /= checked_row_norms(features, "centroid_dispersion").array();
  Matrix centroids = Matrix::Zero(num_classes, features.cols());
  Vector counts = Vector::Zero(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    centroids.row(labels[i]) += unit.row(static_cast<Eigen::Index>(i));
    counts(labels[i]) += 1.0;
  }
  double total = 0.0;
  int pairs = 0;
  for (std::uint32_t a = 0; a < num_classes; ++a) {
    if (counts(a) > 0) centroids.row(a) /= counts(a);
  }
  for (std::uint32_t a = 0; a < num_classes; ++a) {
    for (std::uint32_t b = a + 1; b < num_classes; ++b) {
      if (counts(a) == 0 || counts(b) == 0) continue;
      total += (centroids.row(a) - centroids.row(b)).norm();
      ++pairs;
    }
  }
  return pairs == 0 ? 0.0 : total / pairs;
}

ExperimentResult run_experiment(const ImageEncoder& encoder, const Dataset& dataset,
                                const CategoryEmbeddings& categories, const AdaptConfig& config) {
  ExperimentResult r;
  r.report = run_stream(encoder, dataset, categories, config);
  r.features_pre = encoder.encode_batch(dataset.images, encoder.zero_adapter());
  r.features_post = encoder.encode_batch(dataset.images, r.report.final_adapter);
  r.heatmap_pre = class_similarity_heatmap(r.features_pre, dataset.labels, categories);
  r.heatmap_post = class_similarity_heatmap(r.features_post, dataset.labels, categories);
  r.projection_pre = pca_projection(r.features_pre);
  r.projection_post = pca_projection(r.features_post);
  r.dispersion_pre = centroid_dispersion(r.features_pre, dataset.labels, dataset.num_classes);
  r.dispersion_post = centroid_dispersion(r.features_post, dataset.labels, dataset.num_classes);
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::string matrix_csv(const Matrix& m, const std::string& row_label, const std::string& col_prefix) {
  std::string s = row_label;
  for (Eigen::Index j = 0; j < m.cols(); ++j) s += "," + col_prefix + std::to_string(j);
  s += "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    s += std::to_string(i);
    for (Eigen::Index j = 0; j < m.cols(); ++j) s += "," + fmt(m(i, j));
    s += "\n";
  }
  return s;
}

std::string projection_csv(const Matrix& p, const std::vector<std::uint32_t>& labels) {
  std::string s = "image,label,pc1,pc2\n";
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    s += std::to_string(i) + "," + std::to_string(labels[static_cast<std::size_t>(i)]) + "," +
         fmt(p(i, 0)) + "," + fmt(p.cols() > 1 ? p(i, 1) : 0.0) + "\n";
  }
  return s;
}

}  // namespace

void write_experiment_report(const ExperimentResult& result, const Dataset& dataset,
                             const CategoryEmbeddings& categories, const AdaptConfig& config,
                             const std::filesystem::path& dir, bool per_image) {
  std::filesystem::create_directories(dir);
  const AdaptReport& rep = result.report;
  std::string summary = "metric,value\n";
  summary += "pre_accuracy," + fmt(rep.pre_accuracy) + "\n";
  summary += "post_accuracy," + fmt(rep.post_accuracy) + "\n";
  summary += "online_accuracy," + fmt(rep.online_accuracy) + "\n";
  summary += "heatmap_mean_diagonal_pre," + fmt(mean_diagonal(result.heatmap_pre)) + "\n";
  summary += "heatmap_mean_diagonal_post," + fmt(mean_diagonal(result.heatmap_post)) + "\n";
  summary += "centroid_dispersion_pre," + fmt(result.dispersion_pre) + "\n";
  summary += "centroid_dispersion_post," + fmt(result.dispersion_post) + "\n";
  summary += "batches," + std::to_string(rep.batches) + "\n";
  summary += "alpha," + fmt(config.alpha) + "\n";
  summary += "beta," + fmt(config.beta) + "\n";
  summary += "learning_rate," + fmt(config.learning_rate) + "\n";
  summary += "adapter_sha256," + rep.adapter_checksum + "\n";
  summary += "encoder_sha256," + rep.encoder_checksum_after + "\n";
  summary += "embeddings_sha256," + rep.embeddings_checksum_after + "\n";
  write_text(dir / "summary.csv", summary);

  std::string curve = "batch,step,l_ent,l_pir,l_ca,total\n";
  for (const StepRecord& s : rep.history) {
    curve += std::to_string(s.batch) + "," + std::to_string(s.step) + "," + fmt(s.loss.l_ent) + "," +
             fmt(s.loss.l_pir) + "," + fmt(s.loss.l_ca) + "," + fmt(s.loss.total) + "\n";
  }
  write_text(dir / "loss_curve.csv", curve);
  write_text(dir / "heatmap_pre.csv", matrix_csv(result.heatmap_pre, "true_class", "category_"));
  write_text(dir / "heatmap_post.csv", matrix_csv(result.heatmap_post, "true_class", "category_"));
  write_text(dir / "projection_pre.csv", projection_csv(result.projection_pre, dataset.labels));
  write_text(dir / "projection_post.csv", projection_csv(result.projection_post, dataset.labels));
  if (per_image) {
    write_text(dir / "similarity_pre.csv",
               matrix_csv(cosine_similarity_matrix(result.features_pre, categories.matrix()), "image", "category_"));
    write_text(dir / "similarity_post.csv",
               matrix_csv(cosine_similarity_matrix(result.features_post, categories.matrix()), "image", "category_"));
  }
}

// ---------------------------------------------------------------------------

std::string to_string(LossMask mask) {
  switch (mask) {
    case LossMask::EntOnly: return "ent";
    case LossMask::EntPir: return "ent+pir";
    case LossMask::EntCa: return "ent+ca";
    case LossMask::Full: return "full";
  }
  return "?";
}

LossMask parse_loss_mask(const std::string& text) {
  if (text == "ent" || text == "ent-only") return LossMask::EntOnly;
  if (text == "ent+pir") return LossMask::EntPir;
  if (text == "ent+ca") return LossMask::EntCa;
  if (text == "full") return LossMask::Full;
  throw ConfigError("unknown loss mask '" + text + "'");
}

double AblationCell::effective_alpha() const {
  return (mask == LossMask::EntPir || mask == LossMask::Full) ? alpha : 0.0;
}

double AblationCell::effective_beta() const {
  return (mask == LossMask::EntCa || mask == LossMask::Full) ? beta : 0.0;
}

std::vector<AblationCell> AblationGrid::cells() const {
  std::vector<AblationCell> out;
  for (LossMask m : masks) {
    for (double a : alphas) {
      for (double b : betas) out.push_back(AblationCell{a, b, m});
    }
  }
  return out;
}

AblationGrid AblationGrid::from_json(const nlohmann::json& j) {
  AblationGrid g;
  try {
    if (j.contains("alpha")) g.alphas = j.at("alpha").get<std::vector<double>>();
    if (j.contains("beta")) g.betas = j.at("beta").get<std::vector<double>>();
    if (j.contains("masks")) {
      g.masks.clear();
      for (const auto& m : j.at("masks")) g.masks.push_back(parse_loss_mask(m.get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad ablation grid: ") + e.what());
  }
  if (g.alphas.empty() || g.betas.empty() || g.masks.empty()) {
    throw ConfigError("ablation grid must not be empty");
  }
  for (double v : g.alphas) if (v < 0) throw ConfigError("ablation alpha must be non-negative");
  for (double v : g.betas) if (v < 0) throw ConfigError("ablation beta must be non-negative");
  return g;
}

AblationGrid AblationGrid::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid file " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("cannot parse grid file: ") + e.what());
  }
}

unsigned configured_threads() {
  if (const char* env = std::getenv("SSAM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<AblationRow> run_ablation(const std::vector<AblationInstance>& instances,
                                      const AblationGrid& grid, const AdaptConfig& base,
                                      unsigned threads) {
  if (instances.empty()) throw ConfigError("ablation needs at least one instance");
  const std::vector<AblationCell> cells = grid.cells();
  if (cells.empty()) throw ConfigError("ablation grid is empty");
  std::vector<AblationRow> rows(cells.size());
  if (threads == 0) threads = configured_threads();
  threads = std::min<unsigned>(threads, static_cast<unsigned>(cells.size()));

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t c = next++; c < cells.size(); c = next++) {
      try {
        AblationRow row;
        row.cell = cells[c];
        for (const AblationInstance& inst : instances) {
          AdaptConfig cfg = base;
          cfg.alpha = cells[c].effective_alpha();
          cfg.beta = cells[c].effective_beta();
          cfg.seed = inst.seed;
          const AdaptReport rep = run_stream(*inst.encoder, *inst.dataset, *inst.categories, cfg);
          row.pre.push_back(rep.pre_accuracy);
          row.post.push_back(rep.post_accuracy);
        }
        const double n = static_cast<double>(instances.size());
        for (double v : row.pre) row.mean_pre += v / n;
        for (double v : row.post) row.mean_post += v / n;
        rows[c] = std::move(row);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return rows;
}

void write_ablation_report(const std::vector<AblationRow>& rows, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string s = "alpha,beta,mask,effective_alpha,effective_beta,instances,synthetic_average_pre_accuracy,synthetic_average_post_accuracy,synthetic_average_gain\n";
  for (const AblationRow& r : rows) {
    s += fmt(r.cell.alpha) + "," + fmt(r.cell.beta) + "," + to_string(r.cell.mask) + "," +
         fmt(r.cell.effective_alpha()) + "," + fmt(r.cell.effective_beta()) + "," +
         std::to_string(r.post.size()) + "," + fmt(r.mean_pre) + "," + fmt(r.mean_post) + "," +
         fmt(r.mean_post - r.mean_pre) + "\n";
  }
  write_text(dir / "ablation.csv", s);
  std::string per = "row,instance,pre_accuracy,post_accuracy\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < rows[i].post.size(); ++k) {
      per += std::to_string(i) + "," + std::to_string(k) + "," + fmt(rows[i].pre[k]) + "," +
             fmt(rows[i].post[k]) + "\n";
    }
  }
  write_text(dir / "ablation_instances.csv", per);
}

// ---------------------------------------------------------------------------

namespace {

const char* const kComponents[] = {"ent", "pir", "ca", "total"};

Vector component_values(const ad::LossVars& v) {
  Vector out(4);
  out << v.ent.scalar(), v.pir.scalar(), v.ca.scalar(), v.total.scalar();
  return out;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  if (options.batch < 1 || options.batch > 16 || options.classes < 2 || options.classes > 8 ||
      options.dim < 1 || options.dim > 32) {
    throw ConfigError("gradcheck sizes must satisfy |B| <= 16, 2 <= M <= 8, 1 <= D <= 32");
  }
  const auto started = std::chrono::steady_clock::now();
  const int side = options.image_side;

  struct Family {
    std::string label;
    std::unique_ptr<ImageEncoder> encoder;
  };
  std::vector<Family> families;
  VitConfig vit;
  vit.channels = options.channels;
  vit.height = side;
  vit.width = side;
  vit.patch = 2;
  vit.dim = options.dim;
  vit.seed = options.seed;
  for (int layer : {0, vit.blocks / 2, vit.blocks}) {
    vit.insertion_layer = layer;
    families.push_back({"vit@" + std::to_string(layer), std::make_unique<VitEncoder>(vit)});
  }
  ConvConfig conv;
  conv.channels = options.channels;
  conv.height = side;
  conv.width = side;
  conv.dim = options.dim;
  conv.seed = options.seed;
  families.push_back({"conv", std::make_unique<ConvEncoder>(conv)});

  GradcheckReport report;
  ObjectiveOptions objective;  // alpha = beta = 1
  for (const Family& fam : families) {
    std::array<double, 4> worst{};
    for (int inst = 0; inst < options.instances; ++inst) {
      Rng rng(derive_seed(options.seed, 1000 + static_cast<std::uint64_t>(inst)));
      std::vector<Image> images;
      for (int b = 0; b < options.batch; ++b) {
        images.emplace_back(options.channels, side, side,
                            rng.normal_matrix(options.channels, side * side));
      }
      Matrix t = rng.normal_matrix(options.classes, options.dim);
      for (Eigen::Index r = 0; r < t.rows(); ++r) {
        if (t.row(r).norm() < 1e-6) t(r, 0) += 1.0;
      }
      const CategoryEmbeddings categories(t, EmbeddingSource::SeededOrthonormal);
      const Matrix params = rng.normal_matrix(fam.encoder->adapter_count(), options.dim, 0.01);

      auto forward = [&](Tape& tape, Var a) {
        return ad::total_objective(fam.encoder->encode_batch(images, a),
                                   tape.constant(categories.matrix()), objective);
      };
      std::array<Matrix, 4> analytic;
      for (int c = 0; c < 4; ++c) {
        Tape tape;
        const Var a = tape.variable(params);
        const ad::LossVars v = forward(tape, a);
        const Var roots[] = {v.ent, v.pir, v.ca, v.total};
        tape.backward(roots[c]);
        analytic[static_cast<std::size_t>(c)] = tape.grad(a);
        if (options.corrupt_component && *options.corrupt_component == kComponents[c]) {
          analytic[static_cast<std::size_t>(c)](0, 0) += 1e-2 * (1.0 + analytic[c].cwiseAbs().maxCoeff());
        }
      }
      std::array<Matrix, 4> numeric;
      for (Matrix& m : numeric) m.resize(params.rows(), params.cols());
      Matrix probe = params;
      for (Eigen::Index i = 0; i < params.size(); ++i) {
        const double saved = probe.data()[i];
        probe.data()[i] = saved + options.step;
        Vector up, down;
        {
          Tape tape;
          up = component_values(forward(tape, tape.constant(probe)));
        }
        probe.data()[i] = saved - options.step;
        {
          Tape tape;
          down = component_values(forward(tape, tape.constant(probe)));
        }
        probe.data()[i] = saved;
        for (int c = 0; c < 4; ++c) numeric[static_cast<std::size_t>(c)].data()[i] = (up(c) - down(c)) / (2.0 * options.step);
      }
      for (std::size_t c = 0; c < 4; ++c) {
        worst[c] = std::max(worst[c], max_relative_error(analytic[c], numeric[c]));
      }
    }
    for (std::size_t c = 0; c < 4; ++c) {
      GradcheckEntry e{fam.label, kComponents[c], worst[c], worst[c] <= options.tolerance};
      report.max_relative_error = std::max(report.max_relative_error, worst[c]);
      report.passed = report.passed && e.passed;
      report.entries.push_back(e);
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace ssam
