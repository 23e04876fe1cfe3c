// AVX2 + FMA variants. This file is compiled with -mavx2 -mfma and must only
// be entered after dispatch.cpp has confirmed CPU support.

#include <immintrin.h>

#include <cmath>

#include "svf/kernels.hpp"

namespace svf::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  if (i + 4 <= n) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    i += 4;
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    _mm256_storeu_pd(y + i + 4,
                     _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  if (i + 4 <= n) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    i += 4;
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void rotate_avx2(double* x, double* y, double c, double s, std::size_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xi = _mm256_loadu_pd(x + i);
    const __m256d yi = _mm256_loadu_pd(y + i);
    _mm256_storeu_pd(x + i, _mm256_fmsub_pd(vc, xi, _mm256_mul_pd(vs, yi)));
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(vs, xi, _mm256_mul_pd(vc, yi)));
  }
  for (; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

Gram2 gram2_avx2(const double* x, const double* y, std::size_t n) {
  __m256d xx = _mm256_setzero_pd();
  __m256d yy = _mm256_setzero_pd();
  __m256d xy = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xi = _mm256_loadu_pd(x + i);
    const __m256d yi = _mm256_loadu_pd(y + i);
    xx = _mm256_fmadd_pd(xi, xi, xx);
    yy = _mm256_fmadd_pd(yi, yi, yy);
    xy = _mm256_fmadd_pd(xi, yi, xy);
  }
  Gram2 g{hsum(xx), hsum(yy), hsum(xy)};
  for (; i < n; ++i) {
    g.xx += x[i] * x[i];
    g.yy += y[i] * y[i];
    g.xy += x[i] * y[i];
  }
  return g;
}

void adamw_avx2(double* param, const double* grad, double* m, double* v, std::size_t n,
                const AdamWCoeffs& k) {
  const double decay = 1.0 - k.lr * k.weight_decay;
  const __m256d b1 = _mm256_set1_pd(k.beta1);
  const __m256d b2 = _mm256_set1_pd(k.beta2);
  const __m256d one_b1 = _mm256_set1_pd(1.0 - k.beta1);
  const __m256d one_b2 = _mm256_set1_pd(1.0 - k.beta2);
  const __m256d bc1 = _mm256_set1_pd(k.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(k.bias_correction2);
  const __m256d lr = _mm256_set1_pd(k.lr);
  const __m256d eps = _mm256_set1_pd(k.eps);
  const __m256d dec = _mm256_set1_pd(decay);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(one_b1, g));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(_mm256_mul_pd(one_b2, g), g));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d m_hat = _mm256_div_pd(mi, bc1);
    const __m256d v_hat = _mm256_div_pd(vi, bc2);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(lr, m_hat), _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_mul_pd(_mm256_loadu_pd(param + i), dec), step));
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

// 4 x 8 register tile; row and column remainders fall back to narrower tiles.
void gemm_avx2(std::size_t n, std::size_t k, std::size_t c, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* out, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const double* a0 = a + i * lda;
    const double* a1 = a0 + lda;
    const double* a2 = a1 + lda;
    const double* a3 = a2 + lda;
    double* o0 = out + i * ldc;
    double* o1 = o0 + ldc;
    double* o2 = o1 + ldc;
    double* o3 = o2 + ldc;
    std::size_t j = 0;
    for (; j + 8 <= c; j += 8) {
      __m256d c00 = _mm256_loadu_pd(o0 + j), c01 = _mm256_loadu_pd(o0 + j + 4);
      __m256d c10 = _mm256_loadu_pd(o1 + j), c11 = _mm256_loadu_pd(o1 + j + 4);
      __m256d c20 = _mm256_loadu_pd(o2 + j), c21 = _mm256_loadu_pd(o2 + j + 4);
      __m256d c30 = _mm256_loadu_pd(o3 + j), c31 = _mm256_loadu_pd(o3 + j + 4);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * ldb + j);
        const __m256d b1 = _mm256_loadu_pd(b + p * ldb + j + 4);
        __m256d s = _mm256_broadcast_sd(a0 + p);
        c00 = _mm256_fmadd_pd(s, b0, c00);
        c01 = _mm256_fmadd_pd(s, b1, c01);
        s = _mm256_broadcast_sd(a1 + p);
        c10 = _mm256_fmadd_pd(s, b0, c10);
        c11 = _mm256_fmadd_pd(s, b1, c11);
        s = _mm256_broadcast_sd(a2 + p);
        c20 = _mm256_fmadd_pd(s, b0, c20);
        c21 = _mm256_fmadd_pd(s, b1, c21);
        s = _mm256_broadcast_sd(a3 + p);
        c30 = _mm256_fmadd_pd(s, b0, c30);
        c31 = _mm256_fmadd_pd(s, b1, c31);
      }
      _mm256_storeu_pd(o0 + j, c00);
      _mm256_storeu_pd(o0 + j + 4, c01);
      _mm256_storeu_pd(o1 + j, c10);
      _mm256_storeu_pd(o1 + j + 4, c11);
      _mm256_storeu_pd(o2 + j, c20);
      _mm256_storeu_pd(o2 + j + 4, c21);
      _mm256_storeu_pd(o3 + j, c30);
      _mm256_storeu_pd(o3 + j + 4, c31);
    }
    for (; j + 4 <= c; j += 4) {
      __m256d c0 = _mm256_loadu_pd(o0 + j), c1 = _mm256_loadu_pd(o1 + j);
      __m256d c2 = _mm256_loadu_pd(o2 + j), c3 = _mm256_loadu_pd(o3 + j);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d bv = _mm256_loadu_pd(b + p * ldb + j);
        c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + p), bv, c0);
        c1 = _mm256_fmadd_pd(_mm256_broadcast_sd(a1 + p), bv, c1);
        c2 = _mm256_fmadd_pd(_mm256_broadcast_sd(a2 + p), bv, c2);
        c3 = _mm256_fmadd_pd(_mm256_broadcast_sd(a3 + p), bv, c3);
      }
      _mm256_storeu_pd(o0 + j, c0);
      _mm256_storeu_pd(o1 + j, c1);
      _mm256_storeu_pd(o2 + j, c2);
      _mm256_storeu_pd(o3 + j, c3);
    }
    for (; j < c; ++j) {
      double s0 = o0[j], s1 = o1[j], s2 = o2[j], s3 = o3[j];
      for (std::size_t p = 0; p < k; ++p) {
        const double bv = b[p * ldb + j];
        s0 += a0[p] * bv;
        s1 += a1[p] * bv;
        s2 += a2[p] * bv;
        s3 += a3[p] * bv;
      }
      o0[j] = s0;
      o1[j] = s1;
      o2[j] = s2;
      o3[j] = s3;
    }
  }
  for (; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) axpy_avx2(a[i * lda + p], b + p * ldb, out + i * ldc, c);
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable t{Backend::avx2, dot_avx2,   axpy_avx2, rotate_avx2,
                             gram2_avx2,    adamw_avx2, gemm_avx2};
  return t;
}

}  // namespace svf::kernels
