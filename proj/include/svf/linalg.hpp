#pragma once

// Dense real matrices (row-major, 64-bit) and the decompositions the rest of
// the library is built on: one-sided Jacobi SVD, Householder QR, Haar-random
// orthogonal sampling, cosine-similarity tables.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace svf {

using Vector = std::vector<double>;
using Rng = std::mt19937_64;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix diagonal(std::span<const double> diag);
  // Columns of the result are the given vectors.
  static Matrix from_columns(const std::vector<Vector>& columns);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  Vector col(std::size_t c) const;
  void set_col(std::size_t c, std::span<const double> values);

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  Matrix transposed() const;
  bool all_finite() const noexcept;
  void fill(double value) noexcept;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s) noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A^T * B
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// C = A * B^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// Accumulating variants: C += A^T * B, C += A * B.
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& c);

Vector matvec(const Matrix& a, std::span<const double> x);
Vector matvec_t(const Matrix& a, std::span<const double> x);
Matrix outer(std::span<const double> x, std::span<const double> y);

double dot(std::span<const double> x, std::span<const double> y);
double norm2(std::span<const double> x);
double frobenius_norm(const Matrix& a);
double trace(const Matrix& a);
Vector normalized(std::span<const double> x);

// sin of the angle between two nonzero vectors, sign-insensitive (lines, not rays).
double sin_angle(std::span<const double> x, std::span<const double> y);

struct SvdResult {
  Matrix u;      // rows x k
  Vector sigma;  // k, descending, >= 0
  Matrix v;      // cols x k

  Matrix reconstruct() const;
  std::size_t rank() const noexcept { return sigma.size(); }
};

class SvdNoConvergence : public std::runtime_error {
 public:
  SvdNoConvergence(std::size_t sweeps, double off_diagonal);
  std::size_t sweeps() const noexcept { return sweeps_; }
  double off_diagonal() const noexcept { return off_diagonal_; }

 private:
  std::size_t sweeps_;
  double off_diagonal_;
};

struct SvdOptions {
  std::size_t max_sweeps = 100;
  double tolerance = 1e-12;
};

// One-sided Jacobi SVD. k = min(rows, cols). For each k the entry of u_k with
// the largest magnitude is nonnegative; v_k carries the compensating sign.
SvdResult svd(const Matrix& a, const SvdOptions& options = {});

// Flips column pairs so that each u_k has a nonnegative largest-magnitude entry.
void apply_sign_convention(SvdResult& s);

// Thin SVD of a^T b for wide factors with equal row count r; k = r. Cost is
// linear in the column count, used for W_Q^T W_K with H << D.
SvdResult svd_product_tn(const Matrix& a, const Matrix& b, const SvdOptions& options = {});

double operator_norm(const Matrix& a);

// Moore-Penrose pseudoinverse; singular values below rel_threshold * sigma_1
// are treated as zero.
Matrix pseudo_inverse(const Matrix& a, double rel_threshold = 1e-10);

// sigma_max / sigma_min (infinity when singular).
double condition_number(const Matrix& a);

struct QrResult {
  Matrix q;  // n x n orthogonal
  Matrix r;  // n x n upper triangular, nonnegative diagonal
};

// Householder QR of a square matrix with R's diagonal made nonnegative.
QrResult qr_square(const Matrix& a);

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0);

// Haar-distributed orthogonal matrix: Q from the QR of a Gaussian matrix with
// R's diagonal forced positive.
Matrix haar_orthogonal(std::size_t n, Rng& rng);

class ZeroColumnError : public std::invalid_argument {
 public:
  ZeroColumnError(const std::string& which, std::size_t column);
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t column_;
};

// Entry (i, j) is the cosine between column i of a and column j of b.
Matrix cosine_similarity_matrix(const Matrix& a, const Matrix& b);

}  // namespace svf
