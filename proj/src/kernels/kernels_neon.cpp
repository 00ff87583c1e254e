// NEON (aarch64, float64x2) kernels.

#include "lse/kernels.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)

#include <arm_neon.h>

namespace lse::kernels {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    }
    double s = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

// 4x4 block: 8 accumulators of two lanes.
void gemm_nn_neon(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            float64x2_t r[4][2];
            for (int r_ = 0; r_ < 4; ++r_) {
                r[r_][0] = vld1q_f64(c + (i + r_) * ldc + j);
                r[r_][1] = vld1q_f64(c + (i + r_) * ldc + j + 2);
            }
            for (std::size_t p = 0; p < k; ++p) {
                const float64x2_t b0 = vld1q_f64(b + p * ldb + j);
                const float64x2_t b1 = vld1q_f64(b + p * ldb + j + 2);
                for (int r_ = 0; r_ < 4; ++r_) {
                    const float64x2_t av = vdupq_n_f64(a[(i + r_) * lda + p]);
                    r[r_][0] = vfmaq_f64(r[r_][0], av, b0);
                    r[r_][1] = vfmaq_f64(r[r_][1], av, b1);
                }
            }
            for (int r_ = 0; r_ < 4; ++r_) {
                vst1q_f64(c + (i + r_) * ldc + j, r[r_][0]);
                vst1q_f64(c + (i + r_) * ldc + j + 2, r[r_][1]);
            }
        }
        for (; j < n; ++j)
            for (std::size_t r_ = 0; r_ < 4; ++r_) {
                double s = c[(i + r_) * ldc + j];
                for (std::size_t p = 0; p < k; ++p) s += a[(i + r_) * lda + p] * b[p * ldb + j];
                c[(i + r_) * ldc + j] = s;
            }
    }
    for (; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) axpy_neon(a[i * lda + p], b + p * ldb, c + i * ldc, n);
}

void sq_dist_neon(const double* v, const double* codebook, std::size_t count, std::size_t dim,
                  double* out) {
    for (std::size_t j = 0; j < count; ++j) {
        const double* cw = codebook + j * dim;
        float64x2_t acc = vdupq_n_f64(0.0);
        std::size_t i = 0;
        for (; i + 2 <= dim; i += 2) {
            const float64x2_t d = vsubq_f64(vld1q_f64(v + i), vld1q_f64(cw + i));
            acc = vfmaq_f64(acc, d, d);
        }
        double s = vaddvq_f64(acc);
        for (; i < dim; ++i) {
            const double d = v[i] - cw[i];
            s += d * d;
        }
        out[j] = s;
    }
}

const KernelTable kNeon{Isa::neon, dot_neon, axpy_neon, gemm_nn_neon, sq_dist_neon};

}  // namespace

const KernelTable* neon_table() noexcept { return &kNeon; }

}  // namespace lse::kernels

#else

namespace lse::kernels {
const KernelTable* neon_table() noexcept { return nullptr; }
}  // namespace lse::kernels

#endif
