// NEON (AArch64 Advanced SIMD) variants. Advanced SIMD with float64 lanes is
// mandatory on AArch64, so no runtime probe is needed once this is compiled in.

#include <arm_neon.h>

#include <cmath>

#include "svf/kernels.hpp"

namespace svf::kernels {
namespace {

double dot_neon(const double* x, const double* y, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(x + i), vld1q_f64(y + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t a = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), a, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void rotate_neon(double* x, double* y, double c, double s, std::size_t n) {
  const float64x2_t vc = vdupq_n_f64(c);
  const float64x2_t vs = vdupq_n_f64(s);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t xi = vld1q_f64(x + i);
    const float64x2_t yi = vld1q_f64(y + i);
    vst1q_f64(x + i, vfmsq_f64(vmulq_f64(vc, xi), vs, yi));
    vst1q_f64(y + i, vfmaq_f64(vmulq_f64(vc, yi), vs, xi));
  }
  for (; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

Gram2 gram2_neon(const double* x, const double* y, std::size_t n) {
  float64x2_t xx = vdupq_n_f64(0.0);
  float64x2_t yy = vdupq_n_f64(0.0);
  float64x2_t xy = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t xi = vld1q_f64(x + i);
    const float64x2_t yi = vld1q_f64(y + i);
    xx = vfmaq_f64(xx, xi, xi);
    yy = vfmaq_f64(yy, yi, yi);
    xy = vfmaq_f64(xy, xi, yi);
  }
  Gram2 g{vaddvq_f64(xx), vaddvq_f64(yy), vaddvq_f64(xy)};
  for (; i < n; ++i) {
    g.xx += x[i] * x[i];
    g.yy += y[i] * y[i];
    g.xy += x[i] * y[i];
  }
  return g;
}

void adamw_neon(double* param, const double* grad, double* m, double* v, std::size_t n,
                const AdamWCoeffs& k) {
  const double decay = 1.0 - k.lr * k.weight_decay;
  const float64x2_t b1 = vdupq_n_f64(k.beta1);
  const float64x2_t b2 = vdupq_n_f64(k.beta2);
  const float64x2_t one_b1 = vdupq_n_f64(1.0 - k.beta1);
  const float64x2_t one_b2 = vdupq_n_f64(1.0 - k.beta2);
  const float64x2_t bc1 = vdupq_n_f64(k.bias_correction1);
  const float64x2_t bc2 = vdupq_n_f64(k.bias_correction2);
  const float64x2_t lr = vdupq_n_f64(k.lr);
  const float64x2_t eps = vdupq_n_f64(k.eps);
  const float64x2_t dec = vdupq_n_f64(decay);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t g = vld1q_f64(grad + i);
    const float64x2_t mi = vaddq_f64(vmulq_f64(b1, vld1q_f64(m + i)), vmulq_f64(one_b1, g));
    const float64x2_t vi = vaddq_f64(vmulq_f64(b2, vld1q_f64(v + i)), vmulq_f64(vmulq_f64(one_b2, g), g));
    vst1q_f64(m + i, mi);
    vst1q_f64(v + i, vi);
    const float64x2_t m_hat = vdivq_f64(mi, bc1);
    const float64x2_t v_hat = vdivq_f64(vi, bc2);
    const float64x2_t step = vdivq_f64(vmulq_f64(lr, m_hat), vaddq_f64(vsqrtq_f64(v_hat), eps));
    vst1q_f64(param + i, vsubq_f64(vmulq_f64(vld1q_f64(param + i), dec), step));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = k.beta1 * m[i] + (1.0 - k.beta1) * g;
    v[i] = k.beta2 * v[i] + (1.0 - k.beta2) * g * g;
    const double m_hat = m[i] / k.bias_correction1;
    const double v_hat = v[i] / k.bias_correction2;
    param[i] = param[i] * decay - k.lr * m_hat / (std::sqrt(v_hat) + k.eps);
  }
}

void gemm_neon(std::size_t n, std::size_t k, std::size_t c, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* out, std::size_t ldc) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) axpy_neon(a[i * lda + p], b + p * ldb, out + i * ldc, c);
}

}  // namespace

const KernelTable& neon_table() {
  static const KernelTable t{Backend::neon, dot_neon,   axpy_neon, rotate_neon,
                             gram2_neon,    adamw_neon, gemm_neon};
  return t;
}

}  // namespace svf::kernels
