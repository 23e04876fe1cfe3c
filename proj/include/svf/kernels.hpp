#pragma once

// Data-parallel inner loops used by linalg, the toy model and the optimizer.
//
// Every kernel has a scalar reference implementation. SIMD variants (AVX2+FMA
// on x86-64, NEON on aarch64) are compiled into separate translation units and
// selected once at runtime from CPU feature bits. The environment variable
// SVF_KERNELS=scalar|avx2|neon forces a backend; tests use select() directly.

#include <cstddef>
#include <span>
#include <string_view>

namespace svf::kernels {

enum class Backend { scalar, avx2, neon };

std::string_view backend_name(Backend b);

struct AdamWCoeffs {
  double lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double bias_correction1 = 1.0;  // 1 - beta1^t
  double bias_correction2 = 1.0;  // 1 - beta2^t
};

struct Gram2 {
  double xx = 0.0;
  double yy = 0.0;
  double xy = 0.0;
};

struct KernelTable {
  Backend backend;
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // x <- c*x - s*y, y <- s*x + c*y
  void (*rotate)(double* x, double* y, double c, double s, std::size_t n);
  Gram2 (*gram2)(const double* x, const double* y, std::size_t n);
  void (*adamw)(double* param, const double* grad, double* m, double* v, std::size_t n,
                const AdamWCoeffs& k);
  // out (n x c, stride ldc) += a (n x k, stride lda) * b (k x c, stride ldb)
  void (*gemm)(std::size_t n, std::size_t k, std::size_t c, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* out, std::size_t ldc);
};

const KernelTable& scalar_table();
#if defined(SVF_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
#if defined(SVF_HAVE_NEON)
const KernelTable& neon_table();
#endif

bool available(Backend b);

// Throws std::invalid_argument when the backend is not compiled in or the CPU
// lacks the required instructions.
const KernelTable& table(Backend b);

const KernelTable& active();
void select(Backend b);

// RAII override of the active backend, restores the previous one on exit.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b);
  ~ScopedBackend();
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace svf::kernels
