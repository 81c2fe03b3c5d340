#include "ssam/adaptation.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "ssam/checksum.hpp"
#include "ssam/rng.hpp"

namespace ssam {

void AdaptConfig::validate() const {
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("alpha and beta must be non-negative");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (steps_per_batch < 0) throw ConfigError("steps per batch must be non-negative");
  if (ca_temperature && !(*ca_temperature > 0.0)) throw ConfigError("temperature must be positive");
}

ObjectiveOptions AdaptConfig::objective() const {
  ObjectiveOptions o;
  o.alpha = alpha;
  o.beta = beta;
  o.ca_temperature = ca_temperature;
  o.stop_grad_target = stop_grad_target;
  return o;
}

Optimizer::Optimizer(const AdaptConfig& config)
    : kind_(config.optimizer),
      lr_(config.learning_rate),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      epsilon_(config.adam_epsilon) {}

void Optimizer::step(Matrix& params, const Matrix& grad) {
  if (params.rows() != grad.rows() || params.cols() != grad.cols()) {
    throw DimensionError("optimizer: gradient shape differs from parameters");
  }
  ++t_;
  if (kind_ == OptimizerKind::Sgd) {
    params -= lr_ * grad;
    return;
  }
  if (m_.size() == 0) {
    m_ = Matrix::Zero(params.rows(), params.cols());
    v_ = Matrix::Zero(params.rows(), params.cols());
  }
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + epsilon_);
}

void Optimizer::reset() {
  m_.resize(0, 0);
  v_.resize(0, 0);
  t_ = 0;
}

int classify(const RowVector& feature, const CategoryEmbeddings& categories) {
  const Matrix scores = cosine_similarity_matrix(Matrix(feature), categories.matrix());
  int best = 0;
  for (Eigen::Index j = 1; j < scores.cols(); ++j) {
    if (scores(0, j) > scores(0, best)) best = static_cast<int>(j);
  }
  return best;
}

std::vector<int> classify_batch(const Matrix& features, const CategoryEmbeddings& categories) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) out.push_back(classify(features.row(i), categories));
  return out;
}

double evaluate(const ImageEncoder& encoder, const Dataset& dataset, const AdapterParams& adapter,
                const CategoryEmbeddings& categories) {
  if (dataset.size() == 0) return 0.0;
  const std::vector<int> predicted =
      classify_batch(encoder.encode_batch(dataset.images, adapter), categories);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    correct += static_cast<std::uint32_t>(predicted[i]) == dataset.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

ObjectiveGradient objective_gradient(const ImageEncoder& encoder, std::span<const Image> batch,
                                     const AdapterParams& adapter,
                                     const CategoryEmbeddings& categories,
                                     const ObjectiveOptions& options) {
  Tape tape;
  const Var a = tape.variable(adapter.tokens);
  const Var features = encoder.encode_batch(batch, a);
  const ad::LossVars losses =
      ad::total_objective(features, tape.constant(categories.matrix()), options);
  tape.backward(losses.total);
  return ObjectiveGradient{breakdown_of(losses, options), tape.grad(a)};
}

BatchOutcome adapt_batch(const ImageEncoder& encoder, std::span<const Image> batch,
                         AdapterParams& adapter, Optimizer& optimizer,
                         const CategoryEmbeddings& categories, const AdaptConfig& config) {
  if (batch.empty()) throw ConfigError("adapt_batch: empty batch");
  config.validate();
  const ObjectiveOptions options = config.objective();
  const AdapterParams saved_adapter = adapter;
  const Optimizer saved_optimizer = optimizer;
  BatchOutcome outcome;
  try {
    for (int s = 0; s < config.steps_per_batch; ++s) {
      const ObjectiveGradient og = objective_gradient(encoder, batch, adapter, categories, options);
      outcome.steps.push_back(og.loss);
      optimizer.step(adapter.tokens, og.gradient);
      require_finite(adapter.tokens, "optimizer_step");
    }
    Tape tape;
    outcome.final_loss = breakdown_of(
        ad::total_objective(encoder.encode_batch(batch, tape.constant(adapter.tokens)),
                            tape.constant(categories.matrix()), options),
        options);
  } catch (const NumericError&) {
    adapter = saved_adapter;
    optimizer = saved_optimizer;
    throw;
  }
  return outcome;
}

std::vector<std::size_t> stream_order(std::size_t count, const AdaptConfig& config) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!config.shuffle) return order;
  Rng rng(derive_seed(config.seed, 0x73747265616d));
  for (std::size_t i = count; i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
  }
  return order;
}

AdaptReport run_stream(const ImageEncoder& encoder, const Dataset& dataset,
                       const CategoryEmbeddings& categories, const AdaptConfig& config) {
  if (dataset.size() == 0) throw ConfigError("run_stream: empty dataset");
  config.validate();
  AdaptReport report;
  report.encoder_checksum_before = encoder.weights_checksum();
  report.embeddings_checksum_before = categories.checksum();

  AdapterParams adapter = encoder.zero_adapter();
  report.pre_accuracy = evaluate(encoder, dataset, adapter, categories);

  Optimizer optimizer(config);
  const std::vector<std::size_t> order = stream_order(dataset.size(), config);
  const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);
  std::size_t online_correct = 0;
  std::vector<Image> batch;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto clock_start = std::chrono::steady_clock::now();
    const std::size_t end = std::min(order.size(), start + batch_size);
    batch.clear();
    for (std::size_t i = start; i < end; ++i) batch.push_back(dataset.images[order[i]]);

    if (config.mode == AdaptMode::Episodic) {
      adapter = encoder.zero_adapter();
      optimizer.reset();
    }
    const std::vector<int> online =
        classify_batch(encoder.encode_batch(batch, adapter), categories);
    for (std::size_t i = start; i < end; ++i) {
      online_correct += static_cast<std::uint32_t>(online[i - start]) == dataset.labels[order[i]];
    }
    const BatchOutcome outcome =
        adapt_batch(encoder, batch, adapter, optimizer, categories, config);
    for (std::size_t s = 0; s < outcome.steps.size(); ++s) {
      report.history.push_back(StepRecord{report.batches, static_cast<int>(s), outcome.steps[s]});
    }
    ++report.batches;
    report.batch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count());
  }

  report.online_accuracy = static_cast<double>(online_correct) / static_cast<double>(dataset.size());
  report.post_accuracy = evaluate(encoder, dataset, adapter, categories);
  report.adapter_checksum = matrix_checksum(adapter.tokens);
  report.final_adapter = std::move(adapter);
  report.encoder_checksum_after = encoder.weights_checksum();
  report.embeddings_checksum_after = categories.checksum();
  return report;
}

}  // namespace ssam
