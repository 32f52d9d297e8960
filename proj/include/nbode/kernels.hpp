#pragma once

#include <cstddef>
#include <string_view>

namespace nbode::kernels {

/// Dense f64 inner loops behind the tensor layer. Each kernel has a scalar
/// reference implementation and an AVX2 variant selected once at startup.
///
/// Contract: for identical inputs the two variants return bit-identical
/// results. Elementwise kernels are trivially lane-independent; reductions
/// (reduce_sum, dot) are defined with a fixed blocked order -- four strided
/// accumulators combined as (acc0 + acc2) + (acc1 + acc3), tail appended
/// last -- and matmul accumulates each output element in ascending-k order.
/// Both variants implement exactly these semantics, and fused
/// multiply-add contraction is disabled project-wide, so results do not
/// depend on which variant runs. The equivalence suite in
/// tests/test_kernels.cpp enforces this bit-for-bit.
enum class Backend { Scalar, Avx2 };

bool avx2_supported();
Backend active_backend();

/// Throws std::invalid_argument if the backend is not available on this CPU.
void set_backend(Backend backend);

std::string_view backend_name(Backend backend);

// out[i] = a[i] op b[i]
void add(const double* a, const double* b, double* out, std::size_t n);
void sub(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);

// out[i] = x[i] * alpha
void scale(const double* x, double alpha, double* out, std::size_t n);

// y[i] += alpha * x[i]
void axpy(double alpha, const double* x, double* y, std::size_t n);

// dst[i] += a[i] * b[i]
void mul_acc(const double* a, const double* b, double* dst, std::size_t n);

double reduce_sum(const double* x, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);

/// out[m x n] = a[m x k] * b[k x n], row-major. out must not alias a or b.
void matmul(const double* a, const double* b, double* out, std::size_t m,
            std::size_t k, std::size_t n);

/// Raw function table for one backend; used by the dispatcher and the
/// equivalence tests, which compare backends directly.
struct KernelTable {
  void (*add)(const double*, const double*, double*, std::size_t);
  void (*sub)(const double*, const double*, double*, std::size_t);
  void (*mul)(const double*, const double*, double*, std::size_t);
  void (*scale)(const double*, double, double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*mul_acc)(const double*, const double*, double*, std::size_t);
  double (*reduce_sum)(const double*, std::size_t);
  double (*dot)(const double*, const double*, std::size_t);
  void (*matmul)(const double*, const double*, double*, std::size_t,
                 std::size_t, std::size_t);
};

const KernelTable& table(Backend backend);

}  // namespace nbode::kernels
