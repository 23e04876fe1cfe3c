#include <cmath>

#include "svf/kernels.hpp"
#include "svf/linalg.hpp"

namespace svf {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (double& x : m.data()) x = normal(rng);
  return m;
}

QrResult qr_square(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("qr_square: matrix must be square");
  const std::size_t n = a.rows();
  const auto& k = kernels::active();
  // Work on columns as contiguous rows.
  Matrix r = a.transposed();
  Matrix qt = Matrix::identity(n);
  Vector h(n);
  for (std::size_t j = 0; j < n; ++j) {
    auto col = r.row(j);
    double alpha = 0.0;
    for (std::size_t i = j; i < n; ++i) alpha += col[i] * col[i];
    alpha = std::sqrt(alpha);
    if (alpha == 0.0) continue;
    if (col[j] > 0.0) alpha = -alpha;
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t i = j; i < n; ++i) h[i] = col[i];
    h[j] -= alpha;
    const double hh = k.dot(h.data(), h.data(), n);
    if (hh == 0.0) continue;
    // Reflect remaining columns of R and the rows of Q^T.
    for (std::size_t c = j; c < n; ++c) {
      double* x = r.row(c).data();
      k.axpy(-2.0 * k.dot(h.data(), x, n) / hh, h.data(), x, n);
    }
    for (std::size_t c = 0; c < n; ++c) {
      double* x = qt.row(c).data();
      k.axpy(-2.0 * k.dot(h.data(), x, n) / hh, h.data(), x, n);
    }
  }
  // qt rows now hold H_{n-1}...H_0 applied to e_c, i.e. Q^T e_c = row c of Q.
  Matrix q = qt;  // row c of qt = (Q^T e_c)^T = row c of Q
  Matrix rr = r.transposed();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) rr(i, j) = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rr(i, i) < 0.0) {
      for (std::size_t c = 0; c < n; ++c) rr(i, c) = -rr(i, c);
      for (std::size_t rrow = 0; rrow < n; ++rrow) q(rrow, i) = -q(rrow, i);
    }
  }
  return QrResult{std::move(q), std::move(rr)};
}

Matrix haar_orthogonal(std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("haar_orthogonal: n must be >= 1");
  if (n == 1) return Matrix(1, 1, gaussian_matrix(1, 1, rng)(0, 0) < 0.0 ? -1.0 : 1.0);
  return qr_square(gaussian_matrix(n, n, rng)).q;
}

}  // namespace svf
