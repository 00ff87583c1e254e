// Scalar reference kernels. These define the semantics every SIMD variant is
// tested against.

#include "lse/kernels.hpp"

namespace lse::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * ldc;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * lda + p];
            const double* brow = b + p * ldb;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

void sq_dist_scalar(const double* v, const double* codebook, std::size_t count, std::size_t dim,
                    double* out) {
    for (std::size_t j = 0; j < count; ++j) {
        const double* c = codebook + j * dim;
        double s = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double d = v[i] - c[i];
            s += d * d;
        }
        out[j] = s;
    }
}

const KernelTable kScalar{Isa::scalar, dot_scalar, axpy_scalar, gemm_nn_scalar, sq_dist_scalar};

}  // namespace

const KernelTable& scalar_table() noexcept { return kScalar; }

}  // namespace lse::kernels
