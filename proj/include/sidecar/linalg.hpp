#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace sidecar {

/// Dense real vector of doubles.
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  Vector(std::initializer_list<double> values);
  explicit Vector(std::vector<double> values);

  std::size_t size() const { return data_.size(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool operator==(const Vector&) const = default;

 private:
  std::vector<double> data_;
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  /// Nested-literal constructor; all rows must have equal length.
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Matrix transposed() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Deterministic generator: std::mt19937_64 (sequence fixed by the C++
/// standard) feeding 53-bit uniforms and a Box-Muller transform of our own,
/// so draws do not depend on the standard library's distribution classes.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Uniform in [0, 1).
  double uniform();
  double gaussian();
  std::uint64_t next_u64() { return engine_(); }

  /// Independent stream for a named sub-purpose; splitmix64 of (seed, stream).
  SeededRng derive(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Matrix matmul(const Matrix& a, const Matrix& b);

/// Solves a·X = rhs by LU with partial pivoting. Throws SingularMatrixError
/// when a pivot magnitude falls below 1e-12.
Matrix solve_linear(const Matrix& a, const Matrix& rhs);

/// Forward substitution for lower-triangular a. Structural zeros of a
/// lower-triangular right-hand side stay exactly zero in the result.
Matrix solve_lower_triangular(const Matrix& a, const Matrix& rhs);

bool is_lower_triangular(const Matrix& a);

/// Diagonal of a lower-triangular matrix, which is its spectrum.
Vector lower_triangular_eigenvalues(const Matrix& a);

Vector seeded_gaussian(SeededRng& rng, std::size_t n, double scale);
Matrix seeded_gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double scale);

double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs(std::span<const double> values);

}  // namespace sidecar
