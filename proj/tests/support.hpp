#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "ssam/encoders.hpp"
#include "ssam/rng.hpp"

namespace ssam::testing {

/// Deterministic 3x12x12 probe image used for golden vectors.
inline Image fixture_image(int channels = 3, int height = 12, int width = 12) {
  Image img(channels, height, width);
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        img.at(c, y, x) = std::sin(0.37 * (c + 1) * (y * width + x) + 0.1 * c) + 0.05 * (y - x);
      }
    }
  }
  return img;
}

/// Deterministic adapter probe: a_{ij} = 0.01 * cos(i + 2j).
inline AdapterParams fixture_adapter(Eigen::Index count, Eigen::Index dim) {
  AdapterParams a = AdapterParams::zeros(count, dim);
  for (Eigen::Index i = 0; i < count; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) a.tokens(i, j) = 0.01 * std::cos(double(i) + 2.0 * double(j));
  }
  return a;
}

inline std::filesystem::path golden_dir() { return SSAM_GOLDEN_DIR; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ssam_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Reference implementations written with explicit loops and no shared code paths.
namespace oracle {

inline std::vector<std::vector<double>> rows_of(const Matrix& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[std::size_t(i)].push_back(m(i, j));
  }
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline Matrix cosine(const Matrix& v, const Matrix& t) {
  const auto vr = rows_of(v);
  const auto tr = rows_of(t);
  Matrix out(v.rows(), t.rows());
  for (std::size_t i = 0; i < vr.size(); ++i) {
    for (std::size_t j = 0; j < tr.size(); ++j) {
      out(Eigen::Index(i), Eigen::Index(j)) =
          dot(vr[i], tr[j]) / (std::sqrt(dot(vr[i], vr[i])) * std::sqrt(dot(tr[j], tr[j])));
    }
  }
  return out;
}

inline Matrix softmax_rows(const Matrix& raw) {
  Matrix out(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    double z = 0.0;
    for (Eigen::Index j = 0; j < raw.cols(); ++j) z += std::exp(raw(i, j));
    for (Eigen::Index j = 0; j < raw.cols(); ++j) out(i, j) = std::exp(raw(i, j)) / z;
  }
  return out;
}

inline Matrix prototypes(const Matrix& a, const Matrix& v) {
  Matrix p = Matrix::Zero(a.cols(), v.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    double mass = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) mass += a(i, j);
    for (Eigen::Index d = 0; d < v.cols(); ++d) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < a.rows(); ++i) s += a(i, j) * v(i, d);
      p(j, d) = s / mass;
    }
  }
  return p;
}

inline Matrix reconstruction(const Matrix& a, const Matrix& p) {
  Matrix out = Matrix::Zero(a.rows(), p.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index d = 0; d < p.cols(); ++d) {
      for (Eigen::Index k = 0; k < a.cols(); ++k) out(i, d) += a(i, k) * p(k, d);
    }
  }
  return out;
}

inline double entropy(const Matrix& a) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (a(i, j) > 0.0) s -= a(i, j) * std::log(a(i, j));
    }
  }
  return s / double(a.rows());
}

inline double pir(const Matrix& recon, const Matrix& v) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (Eigen::Index d = 0; d < v.cols(); ++d) s += (recon(i, d) - v(i, d)) * (recon(i, d) - v(i, d));
  }
  return s / double(v.rows());
}

/// -(1/M) sum_i log softmax_j(s(x_i, y_j))[i]
inline double directional_ca(const Matrix& x, const Matrix& y) {
  const Matrix s = cosine(x, y);
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    double z = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) z += std::exp(s(i, j));
    total -= std::log(std::exp(s(i, i)) / z);
  }
  return total / double(s.rows());
}

inline double ca(const Matrix& p, const Matrix& t) {
  return 0.5 * (directional_ca(p, t) + directional_ca(t, p));
}

}  // namespace oracle
}  // namespace ssam::testing
