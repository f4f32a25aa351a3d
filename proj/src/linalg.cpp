#include "sidecar/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "sidecar/errors.hpp"

namespace sidecar {
namespace {

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw ContractError(std::string(what) + ": non-finite entry");
    }
  }
}

std::string shape(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Vector::Vector(std::initializer_list<double> values) : data_(values) {
  require_finite(data_, "Vector");
}

Vector::Vector(std::vector<double> values) : data_(std::move(values)) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("Matrix: data length does not equal rows*cols");
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size()) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Matrix: ragged literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
  require_finite(data_, "Matrix");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

double SeededRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double SeededRng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - uniform() lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

SeededRng SeededRng::derive(std::uint64_t stream) const {
  return SeededRng(splitmix64(seed_ ^ splitmix64(stream)));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape(a) + " times " + shape(b));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Matrix solve_linear(const Matrix& a, const Matrix& rhs) {
  constexpr double kPivotThreshold = 1e-12;
  if (a.rows() != a.cols()) throw DimensionError("solve_linear: matrix is " + shape(a));
  if (rhs.rows() != a.rows()) {
    throw DimensionError("solve_linear: rhs " + shape(rhs) + " for matrix " + shape(a));
  }
  const std::size_t n = a.rows();
  Matrix lu = a;
  Matrix x = rhs;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(lu(i, k)) > std::abs(lu(pivot, k))) pivot = i;
    }
    if (std::abs(lu(pivot, k)) < kPivotThreshold) {
      throw SingularMatrixError("solve_linear: pivot below 1e-12 in column " + std::to_string(k));
    }
    if (pivot != k) {
      std::swap_ranges(lu.row(k).begin(), lu.row(k).end(), lu.row(pivot).begin());
      std::swap_ranges(x.row(k).begin(), x.row(k).end(), x.row(pivot).begin());
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double factor = lu(i, k) / lu(k, k);
      if (factor == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) lu(i, j) -= factor * lu(k, j);
      for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) -= factor * x(k, j);
    }
  }
  for (std::size_t kk = n; kk-- > 0;) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double acc = x(kk, j);
      for (std::size_t c = kk + 1; c < n; ++c) acc -= lu(kk, c) * x(c, j);
      x(kk, j) = acc / lu(kk, kk);
    }
  }
  return x;
}

Matrix solve_lower_triangular(const Matrix& a, const Matrix& rhs) {
  constexpr double kPivotThreshold = 1e-12;
  if (a.rows() != a.cols()) throw DimensionError("solve_lower_triangular: matrix is " + shape(a));
  if (rhs.rows() != a.rows()) throw DimensionError("solve_lower_triangular: rhs " + shape(rhs));
  if (!is_lower_triangular(a)) throw ContractError("solve_lower_triangular: matrix is not lower triangular");
  const std::size_t n = a.rows();
  Matrix x(n, rhs.cols());
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(a(i, i)) < kPivotThreshold) {
      throw SingularMatrixError("solve_lower_triangular: diagonal below 1e-12 at row " + std::to_string(i));
    }
    for (std::size_t j = 0; j < rhs.cols(); ++j) {
      double acc = rhs(i, j);
      for (std::size_t k = 0; k < i; ++k) acc -= a(i, k) * x(k, j);
      x(i, j) = acc / a(i, i);
    }
  }
  return x;
}

bool is_lower_triangular(const Matrix& a) {
  if (a.rows() != a.cols()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (a(i, j) != 0.0) return false;
  return true;
}

Vector lower_triangular_eigenvalues(const Matrix& a) {
  if (!is_lower_triangular(a)) {
    throw ContractError("lower_triangular_eigenvalues: input is not square lower triangular");
  }
  Vector diag(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) diag[i] = a(i, i);
  return diag;
}

Vector seeded_gaussian(SeededRng& rng, std::size_t n, double scale) {
  if (!(scale >= 0.0)) throw ContractError("seeded_gaussian: scale must be >= 0");
  Vector out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = scale * rng.gaussian();
  return out;
}

Matrix seeded_gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double scale) {
  Vector draws = seeded_gaussian(rng, rows * cols, scale);
  return Matrix(rows, cols, std::vector<double>(draws.values().begin(), draws.values().end()));
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("max_abs_diff: " + shape(a) + " vs " + shape(b));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  }
  return worst;
}

double max_abs(std::span<const double> values) {
  double worst = 0.0;
  for (double v : values) worst = std::max(worst, std::abs(v));
  return worst;
}

}  // namespace sidecar
