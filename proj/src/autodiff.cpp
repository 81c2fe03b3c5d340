#include "ssam/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace ssam {

Var Tape::constant(Matrix value) {
  require_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, false, false, "constant"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
  require_finite(value, "variable");
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, true, false, "variable"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Matrix value, std::span<const Var> parents,
                 Backward backward) {
  require_finite(value, op);
  bool needs = false;
  for (const Var& p : parents) {
    if (&p.tape() != this) throw DimensionError(std::string(op) + ": operands on different tapes");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backward) : nullptr, needs,
                        false, op});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var v, const Matrix& delta) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = delta;
    n.has_grad = true;
  } else {
    n.grad += delta;
  }
}

void Tape::backward(Var root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw DimensionError("backward: root must be 1x1, got " +
                         shape_string(root.rows(), root.cols()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  accumulate(root, Matrix::Ones(1, 1));
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    require_finite(n.grad, n.op);
    // Copy: the closure may accumulate into other nodes of the deque.
    const Matrix upstream = n.grad;
    n.backward(*this, upstream);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

namespace ad {
namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": " + shape_string(a.rows(), a.cols()) + " vs " +
                         shape_string(b.rows(), b.cols()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  return a.tape().record("matmul", ssam::matmul(a.value(), b.value()), {a, b},
                         [a, b](Tape& t, const Matrix& g) {
                           if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
                           if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
                         });
}

Var transpose(Var a) {
  return a.tape().record("transpose", a.value().transpose(), {a},
                         [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  return a.tape().record("add", a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  return a.tape().record("sub", a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  return a.tape().record("mul", a.value().cwiseProduct(b.value()), {a, b},
                         [a, b](Tape& t, const Matrix& g) {
                           if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
                           if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
                         });
}

Var scale(Var a, double factor) {
  return a.tape().record("scale", a.value() * factor, {a},
                         [a, factor](Tape& t, const Matrix& g) { t.accumulate(a, g * factor); });
}

Var add_row(Var m, Var row) {
  if (row.rows() != 1 || row.cols() != m.cols()) {
    throw DimensionError("add_row: " + shape_string(m.rows(), m.cols()) + " plus row " +
                         shape_string(row.rows(), row.cols()));
  }
  Matrix out = m.value();
  out.rowwise() += row.value().row(0);
  return m.tape().record("add_row", std::move(out), {m, row}, [m, row](Tape& t, const Matrix& g) {
    t.accumulate(m, g);
    t.accumulate(row, g.colwise().sum());
  });
}

Var div_rows(Var m, Var column) {
  if (column.cols() != 1 || column.rows() != m.rows()) {
    throw DimensionError("div_rows: " + shape_string(m.rows(), m.cols()) + " by column " +
                         shape_string(column.rows(), column.cols()));
  }
  Matrix out = m.value();
  out.array().colwise() /= column.value().col(0).array();
  return m.tape().record("div_rows", std::move(out), {m, column},
                         [m, column](Tape& t, const Matrix& g) {
                           const Eigen::ArrayXd c = column.value().col(0).array();
                           if (t.requires_grad(m)) {
                             Matrix dm = g;
                             dm.array().colwise() /= c;
                             t.accumulate(m, dm);
                           }
                           if (t.requires_grad(column)) {
                             const Eigen::ArrayXd dot =
                                 g.cwiseProduct(m.value()).rowwise().sum().array();
                             t.accumulate(column, (-dot / c.square()).matrix());
                           }
                         });
}

Var row_softmax(Var m) {
  Matrix out = ssam::row_softmax(m.value());
  Matrix s = out;
  return m.tape().record("row_softmax", std::move(out), {m},
                         [m, s](Tape& t, const Matrix& g) {
                           const Vector inner = g.cwiseProduct(s).rowwise().sum();
                           Matrix dm = g;
                           dm.colwise() -= inner;
                           t.accumulate(m, s.cwiseProduct(dm));
                         });
}

Var cosine_similarity(Var u, Var v) {
  return u.tape().record(
      "cosine_similarity", ssam::cosine_similarity_matrix(u.value(), v.value()), {u, v},
      [u, v](Tape& t, const Matrix& g) {
        const Vector nu = u.value().rowwise().norm();
        const Vector nv = v.value().rowwise().norm();
        Matrix uh = u.value();
        uh.array().colwise() /= nu.array();
        Matrix vh = v.value();
        vh.array().colwise() /= nv.array();
        // d/dx (x/|x|) applied to an adjoint r: (r - (r.x̂) x̂) / |x|.
        auto project = [](const Matrix& r, const Matrix& xh, const Vector& n) {
          Matrix out = r;
          const Vector along = r.cwiseProduct(xh).rowwise().sum();
          out -= (xh.array().colwise() * along.array()).matrix();
          out.array().colwise() /= n.array();
          return out;
        };
        if (t.requires_grad(u)) t.accumulate(u, project(g * vh, uh, nu));
        if (t.requires_grad(v)) t.accumulate(v, project(g.transpose() * uh, vh, nv));
      });
}

Var exp(Var a) {
  Matrix out = a.value().array().exp().matrix();
  Matrix saved = out;
  return a.tape().record("exp", std::move(out), {a}, [a, saved](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(saved));
  });
}

Var log(Var a) {
  if ((a.value().array() <= 0.0).any()) {
    throw NumericError("log", "log of a non-positive value");
  }
  return a.tape().record("log", a.value().array().log().matrix(), {a},
                         [a](Tape& t, const Matrix& g) {
                           t.accumulate(a, g.cwiseQuotient(a.value()));
                         });
}

Var tanh(Var a) {
  Matrix out = a.value().array().tanh().matrix();
  Matrix saved = out;
  return a.tape().record("tanh", std::move(out), {a}, [a, saved](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct((1.0 - saved.array().square()).matrix()));
  });
}

Var xlogx(Var a) {
  if ((a.value().array() < 0.0).any()) {
    throw NumericError("xlogx", "xlogx of a negative value");
  }
  const Matrix out =
      a.value().unaryExpr([](double x) { return x > 0.0 ? x * std::log(x) : 0.0; });
  return a.tape().record("xlogx", out, {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr(
                        [](double x) { return std::log(x) + 1.0; })));
  });
}

Var row_center(Var m) {
  Matrix out = m.value();
  out.colwise() -= m.value().rowwise().mean();
  return m.tape().record("row_center", std::move(out), {m}, [m](Tape& t, const Matrix& g) {
    Matrix d = g;
    d.colwise() -= g.rowwise().mean();
    t.accumulate(m, d);
  });
}

Var sum(Var a) {
  return a.tape().record("sum", Matrix::Constant(1, 1, a.value().sum()), {a},
                         [a](Tape& t, const Matrix& g) {
                           t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
                         });
}

Var mean(Var a) {
  if (a.value().size() == 0) throw DimensionError("mean: empty matrix");
  const double n = static_cast<double>(a.value().size());
  return a.tape().record("mean", Matrix::Constant(1, 1, a.value().sum() / n), {a},
                         [a, n](Tape& t, const Matrix& g) {
                           t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
                         });
}

Var squared_norm(Var a) {
  return a.tape().record("squared_norm", Matrix::Constant(1, 1, a.value().squaredNorm()), {a},
                         [a](Tape& t, const Matrix& g) {
                           t.accumulate(a, a.value() * (2.0 * g(0, 0)));
                         });
}

Var col_sum(Var a) {
  return a.tape().record("col_sum", a.value().colwise().sum(), {a},
                         [a](Tape& t, const Matrix& g) {
                           Matrix d(a.rows(), a.cols());
                           d.rowwise() = g.row(0);
                           t.accumulate(a, d);
                         });
}

Var row_sum(Var a) {
  return a.tape().record("row_sum", a.value().rowwise().sum(), {a},
                         [a](Tape& t, const Matrix& g) {
                           Matrix d(a.rows(), a.cols());
                           d.colwise() = g.col(0);
                           t.accumulate(a, d);
                         });
}

Var col_mean(Var a) {
  if (a.rows() == 0) throw DimensionError("col_mean: no rows");
  return scale(col_sum(a), 1.0 / static_cast<double>(a.rows()));
}

Var vstack(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("vstack: nothing to stack");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw DimensionError("vstack: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts.front().tape().record("vstack", std::move(out), parts,
                                     [saved](Tape& t, const Matrix& g) {
                                       Eigen::Index off = 0;
                                       for (const Var& p : saved) {
                                         t.accumulate(p, g.middleRows(off, p.rows()));
                                         off += p.rows();
                                       }
                                     });
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

Var im2col3x3(Var map, int height, int width) {
  if (map.rows() != static_cast<Eigen::Index>(height) * width) {
    throw DimensionError("im2col3x3: map has " + std::to_string(map.rows()) + " rows, expected " +
                         std::to_string(height * width));
  }
  const Eigen::Index channels = map.cols();
  const Matrix& in = map.value();
  Matrix out = Matrix::Zero(in.rows(), 9 * channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int dy = 0; dy < 3; ++dy) {
        for (int dx = 0; dx < 3; ++dx) {
          const int sy = y + dy - 1;
          const int sx = x + dx - 1;
          if (sy < 0 || sy >= height || sx < 0 || sx >= width) continue;
          out.block(y * width + x, (dy * 3 + dx) * channels, 1, channels) =
              in.row(sy * width + sx);
        }
      }
    }
  }
  return map.tape().record(
      "im2col3x3", std::move(out), {map}, [map, height, width, channels](Tape& t, const Matrix& g) {
        Matrix d = Matrix::Zero(map.rows(), channels);
        for (int y = 0; y < height; ++y) {
          for (int x = 0; x < width; ++x) {
            for (int dy = 0; dy < 3; ++dy) {
              for (int dx = 0; dx < 3; ++dx) {
                const int sy = y + dy - 1;
                const int sx = x + dx - 1;
                if (sy < 0 || sy >= height || sx < 0 || sx >= width) continue;
                d.row(sy * width + sx) += g.block(y * width + x, (dy * 3 + dx) * channels, 1,
                                                  channels);
              }
            }
          }
        }
        t.accumulate(map, d);
      });
}

}  // namespace ad

GradientResult value_and_gradient(const ScalarObjective& objective, const Matrix& params) {
  Tape tape;
  const Var x = tape.variable(params);
  const Var y = objective(x);
  const double value = y.scalar();
  tape.backward(y);
  return GradientResult{value, tape.grad(x)};
}

double evaluate_objective(const ScalarObjective& objective, const Matrix& params) {
  Tape tape;
  return objective(tape.constant(params)).scalar();
}

Matrix finite_difference_gradient(const std::function<double(const Matrix&)>& objective,
                                  const Matrix& params, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_difference_gradient: step must be positive");
  Matrix grad(params.rows(), params.cols());
  Matrix probe = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double saved = probe.data()[i];
    probe.data()[i] = saved + h;
    const double up = objective(probe);
    probe.data()[i] = saved - h;
    const double down = objective(probe);
    probe.data()[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_difference_gradient", "objective returned a non-finite value");
    }
    grad.data()[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

Matrix finite_difference_gradient(const ScalarObjective& objective, const Matrix& params,
                                  double h) {
  return finite_difference_gradient(
      [&objective](const Matrix& p) { return evaluate_objective(objective, p); }, params, h);
}

double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw DimensionError("max_relative_error: shape mismatch");
  }
  const double scale =
      std::max({analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), floor});
  if (scale == 0.0) return 0.0;
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

}  // namespace ssam
