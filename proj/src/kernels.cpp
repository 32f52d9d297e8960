#include "nbode/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace nbode::kernels {

namespace scalar {
extern const KernelTable kTable;
}

#if defined(__x86_64__) || defined(_M_X64)
#define NBODE_HAS_AVX2_TU 1
namespace avx2 {
extern const KernelTable kTable;
}
#else
#define NBODE_HAS_AVX2_TU 0
#endif

namespace {

bool detect_avx2() {
#if NBODE_HAS_AVX2_TU
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Backend initial_backend() {
  // NBODE_KERNEL_BACKEND=scalar|avx2 overrides auto-detection; an avx2
  // request on unsupported hardware falls back to scalar.
  if (const char* env = std::getenv("NBODE_KERNEL_BACKEND")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
    if (std::strcmp(env, "avx2") == 0 && detect_avx2()) return Backend::Avx2;
  }
  return detect_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<const KernelTable*> g_active{nullptr};
std::atomic<Backend> g_backend{Backend::Scalar};

const KernelTable* active_table() {
  const KernelTable* t = g_active.load(std::memory_order_acquire);
  if (t == nullptr) {
    set_backend(initial_backend());
    t = g_active.load(std::memory_order_acquire);
  }
  return t;
}

}  // namespace

bool avx2_supported() { return detect_avx2(); }

Backend active_backend() {
  active_table();
  return g_backend.load(std::memory_order_acquire);
}

void set_backend(Backend backend) {
  g_active.store(&table(backend), std::memory_order_release);
  g_backend.store(backend, std::memory_order_release);
}

std::string_view backend_name(Backend backend) {
  return backend == Backend::Avx2 ? "avx2" : "scalar";
}

const KernelTable& table(Backend backend) {
  if (backend == Backend::Avx2) {
#if NBODE_HAS_AVX2_TU
    if (detect_avx2()) return avx2::kTable;
#endif
    throw std::invalid_argument("kernels: avx2 backend not supported on this CPU");
  }
  return scalar::kTable;
}

void add(const double* a, const double* b, double* out, std::size_t n) {
  active_table()->add(a, b, out, n);
}

void sub(const double* a, const double* b, double* out, std::size_t n) {
  active_table()->sub(a, b, out, n);
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
  active_table()->mul(a, b, out, n);
}

void scale(const double* x, double alpha, double* out, std::size_t n) {
  active_table()->scale(x, alpha, out, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active_table()->axpy(alpha, x, y, n);
}

void mul_acc(const double* a, const double* b, double* dst, std::size_t n) {
  active_table()->mul_acc(a, b, dst, n);
}

double reduce_sum(const double* x, std::size_t n) {
  return active_table()->reduce_sum(x, n);
}

double dot(const double* x, const double* y, std::size_t n) {
  return active_table()->dot(x, y, n);
}

void matmul(const double* a, const double* b, double* out, std::size_t m,
            std::size_t k, std::size_t n) {
  active_table()->matmul(a, b, out, m, k, n);
}

}  // namespace nbode::kernels
