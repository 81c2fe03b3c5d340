#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssam/dataset.hpp"
#include "ssam/encoders.hpp"
#include "ssam/objectives.hpp"

namespace ssam {

enum class AdaptMode { Continual, Episodic };
enum class OptimizerKind { Adam, Sgd };

struct AdaptConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double learning_rate = 1e-4;
  int batch_size = 64;
  int steps_per_batch = 1;
  AdaptMode mode = AdaptMode::Continual;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  /// Permute the stream with `seed` before batching.
  bool shuffle = true;
  std::optional<double> ca_temperature;
  bool stop_grad_target = false;

  void validate() const;
  ObjectiveOptions objective() const;
};

/// Adam or plain SGD over a single parameter matrix. Copyable, so a step can be undone.
class Optimizer {
 public:
  explicit Optimizer(const AdaptConfig& config);

  void step(Matrix& params, const Matrix& grad);
  void reset();
  long steps_taken() const { return t_; }

 private:
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, epsilon_;
  Matrix m_, v_;
  long t_ = 0;
};

/// argmax_j cos(feature, T_j), lowest index on ties.
int classify(const RowVector& feature, const CategoryEmbeddings& categories);
std::vector<int> classify_batch(const Matrix& features, const CategoryEmbeddings& categories);

/// Fraction of images whose predicted category equals the label.
double evaluate(const ImageEncoder& encoder, const Dataset& dataset, const AdapterParams& adapter,
                const CategoryEmbeddings& categories);

struct ObjectiveGradient {
  LossBreakdown loss;
  Matrix gradient;  ///< d total / d adapter
};

/// Loss breakdown and adapter gradient of the weighted objective on one batch.
ObjectiveGradient objective_gradient(const ImageEncoder& encoder, std::span<const Image> batch,
                                     const AdapterParams& adapter,
                                     const CategoryEmbeddings& categories,
                                     const ObjectiveOptions& options);

struct BatchOutcome {
  /// Loss before each optimizer step, one entry per step.
  std::vector<LossBreakdown> steps;
  /// Loss at the adapter state the batch ends with.
  LossBreakdown final_loss;
};

/// Runs `config.steps_per_batch` optimizer steps on the adapter. On a NumericError the
/// adapter and optimizer are restored to their pre-batch state before rethrowing.
BatchOutcome adapt_batch(const ImageEncoder& encoder, std::span<const Image> batch,
                         AdapterParams& adapter, Optimizer& optimizer,
                         const CategoryEmbeddings& categories, const AdaptConfig& config);

struct StepRecord {
  std::size_t batch = 0;
  int step = 0;
  LossBreakdown loss;
};

struct AdaptReport {
  std::vector<StepRecord> history;
  double pre_accuracy = 0.0;
  double post_accuracy = 0.0;
  /// Accuracy of predict-then-adapt on each batch as it arrives.
  double online_accuracy = 0.0;
  AdapterParams final_adapter;
  std::string adapter_checksum;
  std::string encoder_checksum_before, encoder_checksum_after;
  std::string embeddings_checksum_before, embeddings_checksum_after;
  std::vector<double> batch_seconds;
  std::size_t batches = 0;
};

/// Adapts over the dataset stream and measures accuracy before and after.
AdaptReport run_stream(const ImageEncoder& encoder, const Dataset& dataset,
                       const CategoryEmbeddings& categories, const AdaptConfig& config);

/// Stream order used by run_stream.
std::vector<std::size_t> stream_order(std::size_t count, const AdaptConfig& config);

}  // namespace ssam
