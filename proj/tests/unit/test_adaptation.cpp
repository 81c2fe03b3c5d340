#include <doctest.h>

#include <cmath>
#include <limits>

#include "ssam/adaptation.hpp"
#include "ssam/association.hpp"
#include "ssam/bench.hpp"
#include "ssam/checksum.hpp"
#include "ssam/rng.hpp"
#include "support.hpp"

using namespace ssam;
using namespace ssam::testing;

namespace {

struct Fixture {
  SyntheticBenchmark bench;
  VitEncoder encoder;
  explicit Fixture(std::uint32_t per_class = 16)
      : bench(generate_dataset(small_spec(per_class), 0)), encoder(VitConfig{}) {}

  static SyntheticShiftSpec small_spec(std::uint32_t per_class) {
    SyntheticShiftSpec s;
    s.images_per_class = per_class;
    return s;
  }
  const CategoryEmbeddings& categories() const { return bench.vit_embeddings; }
};

}  // namespace

TEST_CASE("classify") {
  const CategoryEmbeddings t = embed_categories(4, 8, 1);
  CHECK(classify(t.matrix().row(2), t) == 2);
  CHECK(classify(RowVector(10.0 * t.matrix().row(3)), t) == 3);
  const CategoryEmbeddings two = embed_categories(2, 4, 3);
  CHECK(classify(RowVector(-two.matrix().row(0)), two) == 1);

  const Matrix tied = Matrix::Identity(2, 2);
  RowVector diag(2);
  diag << 1, 1;
  CHECK(classify(diag, CategoryEmbeddings(tied, EmbeddingSource::File)) == 0);

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const RowVector v = rng.normal_matrix(1, 8);
    CHECK(classify(v, t) == classify(RowVector(std::exp(4.0 * rng.normal()) * v), t));
  }
}

TEST_CASE("evaluate extremes") {
  const Fixture f;
  const CategoryEmbeddings& t = f.categories();
  const Matrix feats = f.encoder.encode_batch(f.bench.dataset.images, f.encoder.zero_adapter());
  Dataset truth = f.bench.dataset;
  Dataset wrong = f.bench.dataset;
  const std::vector<int> pred = classify_batch(feats, t);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth.labels[i] = static_cast<std::uint32_t>(pred[i]);
    wrong.labels[i] = static_cast<std::uint32_t>((pred[i] + 1) % 4);
  }
  CHECK(evaluate(f.encoder, truth, f.encoder.zero_adapter(), t) == 1.0);
  CHECK(evaluate(f.encoder, wrong, f.encoder.zero_adapter(), t) == 0.0);
}

TEST_CASE("adam step") {
  AdaptConfig c;
  c.learning_rate = 0.1;
  Optimizer opt(c);
  Matrix p = Matrix::Zero(1, 2);
  Matrix g(1, 2);
  g << 3.0, -0.5;
  opt.step(p, g);
  // First bias-corrected Adam step moves each coordinate by lr * sign(g) up to epsilon.
  CHECK(std::abs(p(0, 0) + 0.1) < 1e-8);
  CHECK(std::abs(p(0, 1) - 0.1) < 1e-7);
  CHECK(opt.steps_taken() == 1);
  opt.reset();
  CHECK(opt.steps_taken() == 0);

  c.optimizer = OptimizerKind::Sgd;
  Optimizer sgd(c);
  Matrix q = Matrix::Zero(1, 2);
  sgd.step(q, g);
  CHECK(q(0, 0) == -0.1 * 3.0);
}

TEST_CASE("adapt_batch") {
  const Fixture f;
  const std::span<const Image> batch(f.bench.dataset.images.data(), 16);

  SUBCASE("zero learning rate leaves the adapter untouched") {
    AdaptConfig c;
    c.learning_rate = 0.0;
    AdapterParams a = f.encoder.zero_adapter();
    Optimizer opt(c);
    const BatchOutcome out = adapt_batch(f.encoder, batch, a, opt, f.categories(), c);
    CHECK(a.tokens.isZero(0.0));
    CHECK(out.steps.size() == 1);
    CHECK(out.steps[0].total > 0.0);
  }

  SUBCASE("zero weights equal an entropy-only run") {
    AdaptConfig c;
    c.alpha = 0.0;
    c.beta = 0.0;
    c.steps_per_batch = 3;
    AdapterParams a = f.encoder.zero_adapter();
    Optimizer opt(c);
    adapt_batch(f.encoder, batch, a, opt, f.categories(), c);

    AdapterParams b = f.encoder.zero_adapter();
    Optimizer opt_b(c);
    for (int s = 0; s < 3; ++s) {
      Tape tape;
      const Var av = tape.variable(b.tokens);
      const Var feats = f.encoder.encode_batch(batch, av);
      const ad::AssociationVars assoc = ad::association_map(feats, tape.constant(f.categories().matrix()));
      tape.backward(ad::loss_entropy(assoc.normalized));
      opt_b.step(b.tokens, tape.grad(av));
    }
    CHECK(a.tokens == b.tokens);
  }

  SUBCASE("ten steps reduce the loss") {
    AdaptConfig c;
    c.steps_per_batch = 10;
    AdapterParams a = f.encoder.zero_adapter();
    Optimizer opt(c);
    const BatchOutcome out = adapt_batch(f.encoder, batch, a, opt, f.categories(), c);
    CHECK(out.final_loss.total < out.steps.front().total);
  }

  SUBCASE("numeric failure rolls back") {
    AdaptConfig c;
    AdapterParams a = f.encoder.zero_adapter();
    Optimizer opt(c);
    adapt_batch(f.encoder, batch, a, opt, f.categories(), c);
    const Matrix before = a.tokens;
    const long steps_before = opt.steps_taken();
    std::vector<Image> poisoned(batch.begin(), batch.end());
    poisoned[0].pixels().setConstant(1e308);
    CHECK_THROWS_AS(adapt_batch(f.encoder, poisoned, a, opt, f.categories(), c), NumericError);
    CHECK(a.tokens == before);
    CHECK(opt.steps_taken() == steps_before);
  }
}

TEST_CASE("run_stream invariants") {
  const Fixture f;
  AdaptConfig c;
  c.batch_size = 16;

  SUBCASE("frozen weights and embeddings are untouched") {
    const std::string enc = f.encoder.weights_checksum();
    const std::string emb = f.categories().checksum();
    const AdaptReport r = run_stream(f.encoder, f.bench.dataset, f.categories(), c);
    CHECK(r.encoder_checksum_before == enc);
    CHECK(r.encoder_checksum_after == enc);
    CHECK(r.embeddings_checksum_after == emb);
    CHECK(f.encoder.weights_checksum() == enc);
    CHECK(r.batches == 4);
    CHECK(r.history.size() == 4);
  }

  SUBCASE("no steps reproduces the frozen predictions") {
    c.steps_per_batch = 0;
    const AdaptReport r = run_stream(f.encoder, f.bench.dataset, f.categories(), c);
    CHECK(r.post_accuracy == r.pre_accuracy);
    CHECK(r.final_adapter.tokens.isZero(0.0));
    const Matrix frozen = f.encoder.encode_batch(f.bench.dataset.images, f.encoder.zero_adapter());
    const Matrix adapted = f.encoder.encode_batch(f.bench.dataset.images, r.final_adapter);
    CHECK(classify_batch(frozen, f.categories()) == classify_batch(adapted, f.categories()));
  }

  SUBCASE("deterministic history") {
    const AdaptReport a = run_stream(f.encoder, f.bench.dataset, f.categories(), c);
    const AdaptReport b = run_stream(f.encoder, f.bench.dataset, f.categories(), c);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].loss.total == b.history[i].loss.total);
    CHECK(a.adapter_checksum == b.adapter_checksum);
  }

  SUBCASE("episodic with a single batch equals continual") {
    c.batch_size = 64;
    const AdaptReport cont = run_stream(f.encoder, f.bench.dataset, f.categories(), c);
    c.mode = AdaptMode::Episodic;
    const AdaptReport epi = run_stream(f.encoder, f.bench.dataset, f.categories(), c);
    CHECK(cont.adapter_checksum == epi.adapter_checksum);
    CHECK(cont.post_accuracy == epi.post_accuracy);
  }

  SUBCASE("episodic resets between batches") {
    c.mode = AdaptMode::Episodic;
    c.steps_per_batch = 1;
    const AdaptReport epi = run_stream(f.encoder, f.bench.dataset, f.categories(), c);
    // Each batch starts from zero, so every recorded step is taken at the frozen adapter.
    const std::vector<std::size_t> order = stream_order(f.bench.dataset.size(), c);
    std::vector<Image> last;
    for (std::size_t i = 48; i < 64; ++i) last.push_back(f.bench.dataset.images[order[i]]);
    AdapterParams a = f.encoder.zero_adapter();
    Optimizer opt(c);
    adapt_batch(f.encoder, last, a, opt, f.categories(), c);
    CHECK(matrix_checksum(a.tokens) == epi.adapter_checksum);
  }

  SUBCASE("invalid configs") {
    c.batch_size = 0;
    CHECK_THROWS_AS(run_stream(f.encoder, f.bench.dataset, f.categories(), c), ConfigError);
    c.batch_size = 4;
    c.learning_rate = -1.0;
    CHECK_THROWS_AS(run_stream(f.encoder, f.bench.dataset, f.categories(), c), ConfigError);
  }
}
