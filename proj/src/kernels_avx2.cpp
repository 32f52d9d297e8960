#include "nbode/kernels.hpp"

// AVX2 kernel variants. This translation unit is compiled with -mavx2 and is
// only ever entered after the dispatcher has confirmed CPU support. No FMA:
// mul followed by add keeps every lane bit-identical to the scalar kernels.

#if defined(__AVX2__)

#include <immintrin.h>

namespace nbode::kernels::avx2 {

namespace {

// (acc0 + acc2) + (acc1 + acc3), matching the scalar reduction order.
inline double hsum(__m256d acc) {
  const __m128d lo = _mm256_castpd256_pd128(acc);       // lanes 0, 1
  const __m128d hi = _mm256_extractf128_pd(acc, 1);     // lanes 2, 3
  const __m128d pair = _mm_add_pd(lo, hi);              // {a0+a2, a1+a3}
  return _mm_cvtsd_f64(pair) + _mm_cvtsd_f64(_mm_unpackhi_pd(pair, pair));
}

}  // namespace

void add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i,
                     _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i,
                     _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i,
                     _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const double* x, double alpha, double* out, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), va));
  }
  for (; i < n; ++i) out[i] = x[i] * alpha;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), t));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void mul_acc(const double* a, const double* b, double* dst, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), t));
  }
  for (; i < n; ++i) dst[i] += a[i] * b[i];
}

double reduce_sum(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t nv = n & ~std::size_t(3);
  for (std::size_t i = 0; i < nv; i += 4) {
    acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  }
  double s = hsum(acc);
  for (std::size_t i = nv; i < n; ++i) s += x[i];
  return s;
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t nv = n & ~std::size_t(3);
  for (std::size_t i = 0; i < nv; i += 4) {
    acc = _mm256_add_pd(acc,
                        _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  double s = hsum(acc);
  for (std::size_t i = nv; i < n; ++i) s += x[i] * y[i];
  return s;
}

void matmul(const double* a, const double* b, double* out, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) _mm256_storeu_pd(orow + j, _mm256_setzero_pd());
    for (; j < n; ++j) orow[j] = 0.0;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d apv = _mm256_set1_pd(arow[p]);
      const double* brow = b + p * n;
      j = 0;
      for (; j + 4 <= n; j += 4) {
        const __m256d t = _mm256_mul_pd(apv, _mm256_loadu_pd(brow + j));
        _mm256_storeu_pd(orow + j, _mm256_add_pd(_mm256_loadu_pd(orow + j), t));
      }
      for (; j < n; ++j) orow[j] += arow[p] * brow[j];
    }
  }
}

extern const KernelTable kTable;
const KernelTable kTable = {add,     sub,        mul, scale,  axpy,
                            mul_acc, reduce_sum, dot, matmul};

}  // namespace nbode::kernels::avx2

#endif  // __AVX2__
