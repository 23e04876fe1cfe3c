#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "svf/kernels.hpp"

namespace svf::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(SVF_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend best_available() {
  if (available(Backend::avx2)) return Backend::avx2;
  if (available(Backend::neon)) return Backend::neon;
  return Backend::scalar;
}

Backend initial_backend() {
  const char* env = std::getenv("SVF_KERNELS");
  if (env != nullptr) {
    const std::string want(env);
    if (want == "scalar") return Backend::scalar;
    if (want == "avx2" && available(Backend::avx2)) return Backend::avx2;
    if (want == "neon" && available(Backend::neon)) return Backend::neon;
  }
  return best_available();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{&table(initial_backend())};
  return ptr;
}

}  // namespace

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

bool available(Backend b) {
  switch (b) {
    case Backend::scalar: return true;
    case Backend::avx2: return cpu_has_avx2();
    case Backend::neon:
#if defined(SVF_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Backend b) {
  if (!available(b)) {
    throw std::invalid_argument("kernel backend not available: " + std::string(backend_name(b)));
  }
  switch (b) {
#if defined(SVF_HAVE_AVX2)
    case Backend::avx2: return avx2_table();
#endif
#if defined(SVF_HAVE_NEON)
    case Backend::neon: return neon_table();
#endif
    default: return scalar_table();
  }
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(Backend b) { current().store(&table(b), std::memory_order_release); }

ScopedBackend::ScopedBackend(Backend b) : previous_(active().backend) { select(b); }

ScopedBackend::~ScopedBackend() { select(previous_); }

}  // namespace svf::kernels
