// AVX2 + FMA kernels. Compiled with -mavx2 -mfma; only reached after the
// dispatcher has confirmed host support.

#include "lse/kernels.hpp"

#if defined(LSE_HAVE_AVX2)

#include <immintrin.h>

namespace lse::kernels {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

// 4x8 register block: 8 accumulators, two B loads and four broadcasts per k.
void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const double* a0 = a + (i + 0) * lda;
        const double* a1 = a + (i + 1) * lda;
        const double* a2 = a + (i + 2) * lda;
        const double* a3 = a + (i + 3) * lda;
        double* c0 = c + (i + 0) * ldc;
        double* c1 = c + (i + 1) * ldc;
        double* c2 = c + (i + 2) * ldc;
        double* c3 = c + (i + 3) * ldc;
        std::size_t j = 0;
        for (; j + 8 <= n; j += 8) {
            __m256d r00 = _mm256_loadu_pd(c0 + j), r01 = _mm256_loadu_pd(c0 + j + 4);
            __m256d r10 = _mm256_loadu_pd(c1 + j), r11 = _mm256_loadu_pd(c1 + j + 4);
            __m256d r20 = _mm256_loadu_pd(c2 + j), r21 = _mm256_loadu_pd(c2 + j + 4);
            __m256d r30 = _mm256_loadu_pd(c3 + j), r31 = _mm256_loadu_pd(c3 + j + 4);
            const double* bp = b + j;
            for (std::size_t p = 0; p < k; ++p, bp += ldb) {
                const __m256d b0 = _mm256_loadu_pd(bp);
                const __m256d b1 = _mm256_loadu_pd(bp + 4);
                __m256d av = _mm256_broadcast_sd(a0 + p);
                r00 = _mm256_fmadd_pd(av, b0, r00);
                r01 = _mm256_fmadd_pd(av, b1, r01);
                av = _mm256_broadcast_sd(a1 + p);
                r10 = _mm256_fmadd_pd(av, b0, r10);
                r11 = _mm256_fmadd_pd(av, b1, r11);
                av = _mm256_broadcast_sd(a2 + p);
                r20 = _mm256_fmadd_pd(av, b0, r20);
                r21 = _mm256_fmadd_pd(av, b1, r21);
                av = _mm256_broadcast_sd(a3 + p);
                r30 = _mm256_fmadd_pd(av, b0, r30);
                r31 = _mm256_fmadd_pd(av, b1, r31);
            }
            _mm256_storeu_pd(c0 + j, r00), _mm256_storeu_pd(c0 + j + 4, r01);
            _mm256_storeu_pd(c1 + j, r10), _mm256_storeu_pd(c1 + j + 4, r11);
            _mm256_storeu_pd(c2 + j, r20), _mm256_storeu_pd(c2 + j + 4, r21);
            _mm256_storeu_pd(c3 + j, r30), _mm256_storeu_pd(c3 + j + 4, r31);
        }
        for (; j + 4 <= n; j += 4) {
            __m256d r0 = _mm256_loadu_pd(c0 + j);
            __m256d r1 = _mm256_loadu_pd(c1 + j);
            __m256d r2 = _mm256_loadu_pd(c2 + j);
            __m256d r3 = _mm256_loadu_pd(c3 + j);
            const double* bp = b + j;
            for (std::size_t p = 0; p < k; ++p, bp += ldb) {
                const __m256d bv = _mm256_loadu_pd(bp);
                r0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + p), bv, r0);
                r1 = _mm256_fmadd_pd(_mm256_broadcast_sd(a1 + p), bv, r1);
                r2 = _mm256_fmadd_pd(_mm256_broadcast_sd(a2 + p), bv, r2);
                r3 = _mm256_fmadd_pd(_mm256_broadcast_sd(a3 + p), bv, r3);
            }
            _mm256_storeu_pd(c0 + j, r0);
            _mm256_storeu_pd(c1 + j, r1);
            _mm256_storeu_pd(c2 + j, r2);
            _mm256_storeu_pd(c3 + j, r3);
        }
        for (; j < n; ++j) {
            double s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
            for (std::size_t p = 0; p < k; ++p) {
                const double bv = b[p * ldb + j];
                s0 += a0[p] * bv;
                s1 += a1[p] * bv;
                s2 += a2[p] * bv;
                s3 += a3[p] * bv;
            }
            c0[j] = s0, c1[j] = s1, c2[j] = s2, c3[j] = s3;
        }
    }
    for (; i < m; ++i) {
        const double* ar = a + i * lda;
        double* cr = c + i * ldc;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            __m256d r = _mm256_loadu_pd(cr + j);
            const double* bp = b + j;
            for (std::size_t p = 0; p < k; ++p, bp += ldb)
                r = _mm256_fmadd_pd(_mm256_broadcast_sd(ar + p), _mm256_loadu_pd(bp), r);
            _mm256_storeu_pd(cr + j, r);
        }
        for (; j < n; ++j) {
            double s = cr[j];
            for (std::size_t p = 0; p < k; ++p) s += ar[p] * b[p * ldb + j];
            cr[j] = s;
        }
    }
}

void sq_dist_avx2(const double* v, const double* codebook, std::size_t count, std::size_t dim,
                  double* out) {
    for (std::size_t j = 0; j < count; ++j) {
        const double* c = codebook + j * dim;
        __m256d acc = _mm256_setzero_pd();
        std::size_t i = 0;
        for (; i + 4 <= dim; i += 4) {
            const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(v + i), _mm256_loadu_pd(c + i));
            acc = _mm256_fmadd_pd(d, d, acc);
        }
        double s = hsum(acc);
        for (; i < dim; ++i) {
            const double d = v[i] - c[i];
            s += d * d;
        }
        out[j] = s;
    }
}

const KernelTable kAvx2{Isa::avx2, dot_avx2, axpy_avx2, gemm_nn_avx2, sq_dist_avx2};

}  // namespace

const KernelTable* avx2_table() noexcept {
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return &kAvx2;
    return nullptr;
}

}  // namespace lse::kernels

#else

namespace lse::kernels {
const KernelTable* avx2_table() noexcept { return nullptr; }
}  // namespace lse::kernels

#endif
