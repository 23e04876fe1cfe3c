#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "svf/kernels.hpp"
#include "svf/linalg.hpp"

namespace svf {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows * cols, "Matrix: data length must equal rows * cols");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, "Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::diagonal(std::span<const double> diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

Matrix Matrix::from_columns(const std::vector<Vector>& columns) {
  if (columns.empty()) return {};
  Matrix m(columns.front().size(), columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) m.set_col(c, columns[c]);
  return m;
}

Vector Matrix::col(std::size_t c) const {
  Vector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Matrix::set_col(std::size_t c, std::span<const double> values) {
  require(values.size() == rows_, "Matrix::set_col: length mismatch");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

void Matrix::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

Matrix& Matrix::operator+=(const Matrix& other) {
  require(rows_ == other.rows_ && cols_ == other.cols_, "Matrix +=: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  require(rows_ == other.rows_ && cols_ == other.cols_, "Matrix -=: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) noexcept {
  for (double& x : data_) x *= s;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  require(c.rows() == a.rows() && c.cols() == b.cols(), "matmul: output shape mismatch");
  if (c.empty() || a.cols() == 0) return;
  kernels::active().gemm(a.rows(), a.cols(), b.cols(), a.data().data(), a.cols(), b.data().data(),
                         b.cols(), c.data().data(), c.cols());
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  matmul_acc(a, b, c);
  return c;
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  require(a.rows() == b.rows(), "matmul_tn: row counts differ");
  require(c.rows() == a.cols() && c.cols() == b.cols(), "matmul_tn: output shape mismatch");
  matmul_acc(a.transposed(), b, c);
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix c(a.cols(), b.cols());
  matmul_tn_acc(a, b, c);
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_nt: column counts differ");
  Matrix c(a.rows(), b.rows());
  matmul_acc(a, b.transposed(), c);
  return c;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  require(a.cols() == x.size(), "matvec: length mismatch");
  const auto& k = kernels::active();
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = k.dot(a.row(i).data(), x.data(), x.size());
  return y;
}

Vector matvec_t(const Matrix& a, std::span<const double> x) {
  require(a.rows() == x.size(), "matvec_t: length mismatch");
  const auto& k = kernels::active();
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    if (x[i] != 0.0) k.axpy(x[i], a.row(i).data(), y.data(), y.size());
  return y;
}

Matrix outer(std::span<const double> x, std::span<const double> y) {
  Matrix m(x.size(), y.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) m(i, j) = x[i] * y[j];
  return m;
}

double dot(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "dot: length mismatch");
  return kernels::dot(x, y);
}

double norm2(std::span<const double> x) { return std::sqrt(kernels::dot(x, x)); }

double frobenius_norm(const Matrix& a) { return norm2(a.data()); }

double trace(const Matrix& a) {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) t += a(i, i);
  return t;
}

Vector normalized(std::span<const double> x) {
  const double n = norm2(x);
  require(n > 0.0, "normalized: zero vector");
  Vector out(x.begin(), x.end());
  for (double& v : out) v /= n;
  return out;
}

double sin_angle(std::span<const double> x, std::span<const double> y) {
  const double nx = norm2(x);
  const double ny = norm2(y);
  require(nx > 0.0 && ny > 0.0, "sin_angle: zero vector");
  const double c = std::min(1.0, std::abs(dot(x, y)) / (nx * ny));
  // Via the residual norm rather than sqrt(1 - c^2), which loses accuracy near 0.
  Vector r(x.size());
  const double proj = dot(x, y) / (ny * ny);
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - proj * y[i];
  const double s = norm2(r) / nx;
  return std::min(1.0, c < 0.9 ? std::sqrt(std::max(0.0, 1.0 - c * c)) : s);
}

ZeroColumnError::ZeroColumnError(const std::string& which, std::size_t column)
    : std::invalid_argument("zero-norm column " + std::to_string(column) + " in " + which),
      column_(column) {}

Matrix cosine_similarity_matrix(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "cosine_similarity_matrix: row counts differ");
  const Matrix at = a.transposed();
  const Matrix bt = b.transposed();
  Vector na(at.rows());
  Vector nb(bt.rows());
  for (std::size_t i = 0; i < at.rows(); ++i) {
    na[i] = norm2(at.row(i));
    if (!(na[i] > 0.0)) throw ZeroColumnError("first argument", i);
  }
  for (std::size_t j = 0; j < bt.rows(); ++j) {
    nb[j] = norm2(bt.row(j));
    if (!(nb[j] > 0.0)) throw ZeroColumnError("second argument", j);
  }
  Matrix c = matmul_nt(at, bt);
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j)
      c(i, j) = std::clamp(c(i, j) / (na[i] * nb[j]), -1.0, 1.0);
  return c;
}

}  // namespace svf
