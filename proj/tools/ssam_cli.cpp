// Command-line front end: dataset generation, adaptation runs, ablations and gradient checks.
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ssam/bench.hpp"
#include "ssam/errors.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitGradcheck = 3;

ssam::SyntheticShiftSpec read_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ssam::ConfigError("cannot open spec file " + path);
  try {
    ssam::SyntheticShiftSpec spec = nlohmann::json::parse(in).get<ssam::SyntheticShiftSpec>();
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ssam::ConfigError("bad spec file " + path + ": " + e.what());
  }
}

struct AdaptArgs {
  std::string data;
  std::string report;
  std::string mode = "continual";
  std::string encoder = "vit";
  std::string optimizer = "adam";
  ssam::AdaptConfig config;
  int insertion_layer = 0;
  bool per_image = false;
};

ssam::AdaptMode parse_mode(const std::string& s) {
  if (s == "continual") return ssam::AdaptMode::Continual;
  if (s == "episodic") return ssam::AdaptMode::Episodic;
  throw ssam::ConfigError("unknown mode '" + s + "'");
}

ssam::OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return ssam::OptimizerKind::Adam;
  if (s == "sgd") return ssam::OptimizerKind::Sgd;
  throw ssam::ConfigError("unknown optimizer '" + s + "'");
}

std::unique_ptr<ssam::ImageEncoder> encoder_for(const ssam::LoadedBenchmark& bench,
                                                ssam::EncoderKind kind, int insertion_layer) {
  ssam::EncoderSettings settings;
  settings.kind = kind;
  settings.insertion_layer = insertion_layer;
  const ssam::Dataset& ds = bench.dataset;
  return ssam::make_encoder(settings, ds.channels, ds.height, ds.width, bench.seed);
}

int run_gen(const std::string& spec_path, std::uint64_t seed, const std::string& out) {
  const ssam::SyntheticBenchmark bench = ssam::generate_dataset(read_spec(spec_path), seed);
  ssam::save_benchmark(bench, out);
  std::printf("wrote %zu images to %s\n", bench.dataset.size(), out.c_str());
  std::printf("frozen vit accuracy: unshifted %.4f shifted %.4f\n", bench.vit_unshifted_accuracy,
              bench.vit_shifted_accuracy);
  std::printf("frozen conv accuracy: unshifted %.4f shifted %.4f\n", bench.conv_unshifted_accuracy,
              bench.conv_shifted_accuracy);
  return kExitOk;
}

int run_adapt(AdaptArgs args) {
  const ssam::LoadedBenchmark bench = ssam::load_benchmark(args.data);
  const ssam::EncoderKind kind = ssam::parse_encoder_kind(args.encoder);
  args.config.mode = parse_mode(args.mode);
  args.config.optimizer = parse_optimizer(args.optimizer);
  args.config.validate();
  const auto encoder = encoder_for(bench, kind, args.insertion_layer);
  const ssam::CategoryEmbeddings categories = bench.load_embeddings(kind);
  const ssam::ExperimentResult result =
      ssam::run_experiment(*encoder, bench.dataset, categories, args.config);
  ssam::write_experiment_report(result, bench.dataset, categories, args.config, args.report,
                                args.per_image);
  std::printf("accuracy: pre %.4f post %.4f online %.4f\n", result.report.pre_accuracy,
              result.report.post_accuracy, result.report.online_accuracy);
  std::printf("heatmap mean diagonal: pre %.4f post %.4f\n", ssam::mean_diagonal(result.heatmap_pre),
              ssam::mean_diagonal(result.heatmap_post));
  return kExitOk;
}

int run_ablate(const std::string& data, const std::string& grid_path, int seeds,
               const std::string& encoder_name, const std::string& report) {
  if (seeds < 1) throw ssam::ConfigError("--seeds must be at least 1");
  const ssam::LoadedBenchmark bench = ssam::load_benchmark(data);
  const ssam::AblationGrid grid = ssam::AblationGrid::load(grid_path);
  const ssam::EncoderKind kind = ssam::parse_encoder_kind(encoder_name);
  const auto encoder = encoder_for(bench, kind, 0);
  const ssam::CategoryEmbeddings categories = bench.load_embeddings(kind);
  std::vector<ssam::AblationInstance> instances;
  for (int k = 0; k < seeds; ++k) {
    instances.push_back({encoder.get(), &bench.dataset, &categories,
                         bench.seed + static_cast<std::uint64_t>(k)});
  }
  const auto rows = ssam::run_ablation(instances, grid, ssam::AdaptConfig{});
  ssam::write_ablation_report(rows, report);
  for (const auto& r : rows) {
    std::printf("alpha %-5g beta %-5g %-8s synthetic average: pre %.4f post %.4f\n", r.cell.alpha,
                r.cell.beta, ssam::to_string(r.cell.mask).c_str(), r.mean_pre, r.mean_post);
  }
  return kExitOk;
}

int run_gradcheck_command(const ssam::GradcheckOptions& options) {
  const ssam::GradcheckReport report = ssam::run_gradcheck(options);
  for (const auto& e : report.entries) {
    std::printf("%-6s %-6s max_rel_err %.3e %s\n", e.encoder.c_str(), e.component.c_str(),
                e.max_relative_error, e.passed ? "ok" : "FAIL");
  }
  std::printf("max relative error %.3e (tolerance %.1e) in %.2fs\n", report.max_relative_error,
              options.tolerance, report.seconds);
  if (!report.passed) {
    for (const auto& e : report.entries) {
      if (!e.passed) std::fprintf(stderr, "gradcheck failed: %s on %s\n", e.component.c_str(), e.encoder.c_str());
    }
    return kExitGradcheck;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SSAM test-time adaptation toolkit"};
  app.require_subcommand(1);

  std::string spec_path, out_path;
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic shifted dataset");
  gen->add_option("--spec", spec_path, "JSON spec file")->required();
  gen->add_option("--seed", gen_seed, "Generation seed");
  gen->add_option("--out", out_path, "Output dataset path")->required();

  AdaptArgs adapt_args;
  auto* adapt = app.add_subcommand("adapt", "Adapt on a dataset stream and write a report");
  adapt->add_option("--data", adapt_args.data)->required();
  adapt->add_option("--alpha", adapt_args.config.alpha);
  adapt->add_option("--beta", adapt_args.config.beta);
  adapt->add_option("--lr", adapt_args.config.learning_rate);
  adapt->add_option("--batch", adapt_args.config.batch_size);
  adapt->add_option("--steps", adapt_args.config.steps_per_batch, "Optimizer steps per batch");
  adapt->add_option("--mode", adapt_args.mode, "continual|episodic");
  adapt->add_option("--optimizer", adapt_args.optimizer, "adam|sgd");
  adapt->add_option("--encoder", adapt_args.encoder, "vit|conv");
  adapt->add_option("--insertion-layer", adapt_args.insertion_layer);
  adapt->add_option("--seed", adapt_args.config.seed, "Stream order seed");
  adapt->add_option("--report", adapt_args.report, "Report directory")->required();
  adapt->add_flag("--per-image", adapt_args.per_image, "Also write per-image similarity matrices");

  std::string ablate_data, grid_path, ablate_report, ablate_encoder = "vit";
  int seeds = 1;
  auto* ablate = app.add_subcommand("ablate", "Run a loss/weight ablation grid");
  ablate->add_option("--data", ablate_data)->required();
  ablate->add_option("--grid", grid_path, "JSON grid file")->required();
  ablate->add_option("--seeds", seeds, "Stream seeds per cell");
  ablate->add_option("--encoder", ablate_encoder, "vit|conv");
  ablate->add_option("--report", ablate_report)->required();

  ssam::GradcheckOptions gc;
  std::string corrupt;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  gradcheck->add_option("--seed", gc.seed);
  gradcheck->add_option("--instances", gc.instances);
  gradcheck->add_option("--batch", gc.batch);
  gradcheck->add_option("--classes", gc.classes);
  gradcheck->add_option("--dim", gc.dim);
  gradcheck->add_option("--corrupt", corrupt, "Test hook: perturb one component's gradient")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return run_gen(spec_path, gen_seed, out_path);
    if (*adapt) return run_adapt(adapt_args);
    if (*ablate) return run_ablate(ablate_data, grid_path, seeds, ablate_encoder, ablate_report);
    if (*gradcheck) {
      if (!corrupt.empty()) gc.corrupt_component = corrupt;
      return run_gradcheck_command(gc);
    }
  } catch (const ssam::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const ssam::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
