#include <cmath>

#include "svf/kernels.hpp"

namespace svf::kernels {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void rotate_scalar(double* x, double* y, double c, double s, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

Gram2 gram2_scalar(const double* x, const double* y, std::size_t n) {
  Gram2 g;
  for (std::size_t i = 0; i < n; ++i) {
    g.xx += x[i] * x[i];
    g.yy += y[i] * y[i];
    g.xy += x[i] * y[i];
  }
  return g;
}

void adamw_scalar(double* param, const double* grad, double* m, double* v, std::size_t n,
                  const AdamWCoeffs& k) {
  const double decay = 1.0 - k.lr * k.weight_decay;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = k.beta1 * m[i] + (1.0 - k.beta1) * g;
    v[i] = k.beta2 * v[i] + (1.0 - k.beta2) * g * g;
    const double m_hat = m[i] / k.bias_correction1;
    const double v_hat = v[i] / k.bias_correction2;
    param[i] = param[i] * decay - k.lr * m_hat / (std::sqrt(v_hat) + k.eps);
  }
}

void gemm_scalar(std::size_t n, std::size_t k, std::size_t c, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* out, std::size_t ldc) {
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = a[i * lda + p];
      const double* brow = b + p * ldb;
      for (std::size_t j = 0; j < c; ++j) o[j] += s * brow[j];
    }
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{Backend::scalar, dot_scalar,   axpy_scalar, rotate_scalar,
                             gram2_scalar,    adamw_scalar, gemm_scalar};
  return t;
}

}  // namespace svf::kernels
