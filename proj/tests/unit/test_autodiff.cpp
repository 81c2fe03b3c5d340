#include <doctest.h>

#include "ssam/autodiff.hpp"
#include "ssam/rng.hpp"

using namespace ssam;

namespace {

// Reduces any node to a scalar through a fixed random projection so every output entry matters.
Var project(Var out, std::uint64_t seed) {
  Rng rng(seed);
  const Var w = out.tape().constant(rng.normal_matrix(out.rows(), out.cols()));
  return ad::sum(ad::mul(out, w));
}

void check_op(const char* name, const std::function<Var(Var)>& op, Matrix x, double tol = 1e-7) {
  const ScalarObjective f = [&](Var v) { return project(op(v), 99); };
  const GradientResult r = value_and_gradient(f, x);
  const Matrix fd = finite_difference_gradient(f, x);
  INFO(name);
  CHECK(max_relative_error(r.gradient, fd) < tol);
}

}  // namespace

TEST_CASE("every op matches finite differences") {
  Rng rng(3);
  const Matrix a = rng.normal_matrix(4, 3);
  const Matrix b = rng.normal_matrix(3, 5);
  const Matrix c = rng.normal_matrix(4, 3);
  const Matrix row = rng.normal_matrix(1, 3);
  const Matrix positive = (rng.normal_matrix(4, 3).array().abs() + 0.5).matrix();

  check_op("matmul left", [&](Var x) { return ad::matmul(x, x.tape().constant(b)); }, a);
  check_op("matmul right", [&](Var x) { return ad::matmul(x.tape().constant(a), x); }, b);
  check_op("transpose", [](Var x) { return ad::transpose(x); }, a);
  check_op("add", [&](Var x) { return ad::add(x, ad::mul(x, x)); }, a);
  check_op("sub", [&](Var x) { return ad::sub(x.tape().constant(c), ad::mul(x, x)); }, a);
  check_op("scale", [](Var x) { return ad::scale(x, -2.5); }, a);
  check_op("add_row", [&](Var x) { return ad::add_row(x.tape().constant(a), x); }, row);
  check_op("div_rows", [&](Var x) { return ad::div_rows(x.tape().constant(a), ad::row_sum(x)); }, positive);
  check_op("row_softmax", [](Var x) { return ad::row_softmax(x); }, a);
  check_op("cosine left", [&](Var x) { return ad::cosine_similarity(x, x.tape().constant(c)); }, a);
  check_op("cosine both", [](Var x) { return ad::cosine_similarity(x, x); }, a);
  check_op("exp", [](Var x) { return ad::exp(x); }, a);
  check_op("log", [](Var x) { return ad::log(x); }, positive);
  check_op("tanh", [](Var x) { return ad::tanh(x); }, a);
  check_op("xlogx", [](Var x) { return ad::xlogx(x); }, positive);
  check_op("row_center", [](Var x) { return ad::row_center(x); }, a);
  check_op("sum", [](Var x) { return ad::sum(ad::mul(x, x)); }, a);
  check_op("mean", [](Var x) { return ad::mean(ad::mul(x, x)); }, a);
  check_op("squared_norm", [](Var x) { return ad::squared_norm(x); }, a);
  check_op("col_sum", [](Var x) { return ad::col_sum(x); }, a);
  check_op("row_sum", [](Var x) { return ad::row_sum(x); }, a);
  check_op("col_mean", [](Var x) { return ad::col_mean(x); }, a);
  check_op("vstack", [](Var x) {
    const Var parts[] = {x, ad::scale(x, 2.0), ad::tanh(x)};
    return ad::vstack(parts);
  }, a);
  check_op("im2col3x3", [](Var x) { return ad::im2col3x3(x, 3, 4); }, rng.normal_matrix(12, 2));
}

TEST_CASE("stop_gradient blocks the backward pass") {
  Tape tape;
  const Var x = tape.variable(Matrix::Constant(1, 1, 2.0));
  const Var y = ad::mul(x, ad::stop_gradient(x));
  tape.backward(ad::sum(y));
  CHECK(tape.grad(x)(0, 0) == 2.0);
}

TEST_CASE("constants receive no gradient and fan-out accumulates") {
  Tape tape;
  const Var x = tape.variable(Matrix::Constant(1, 1, 3.0));
  const Var k = tape.constant(Matrix::Constant(1, 1, 5.0));
  CHECK_FALSE(tape.requires_grad(k));
  const Var y = ad::add(ad::mul(x, k), ad::mul(x, x));
  CHECK(tape.requires_grad(y));
  tape.backward(y);
  CHECK(tape.grad(x)(0, 0) == 5.0 + 6.0);
  CHECK(tape.grad(k).isZero(0.0));
}

TEST_CASE("backward requires a scalar root") {
  Tape tape;
  const Var x = tape.variable(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(tape.backward(x), DimensionError);
}

TEST_CASE("im2col3x3 layout") {
  Tape tape;
  Matrix map(4, 1);  // 2x2 single channel
  map << 1, 2, 3, 4;
  const Matrix cols = ad::im2col3x3(tape.constant(map), 2, 2).value();
  REQUIRE(cols.rows() == 4);
  REQUIRE(cols.cols() == 9);
  // Output (0,0): centre tap is column 4, right neighbour column 5, below column 7.
  CHECK(cols(0, 4) == 1);
  CHECK(cols(0, 5) == 2);
  CHECK(cols(0, 7) == 3);
  CHECK(cols(0, 8) == 4);
  CHECK(cols(0, 0) == 0);
}
