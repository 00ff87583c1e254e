#pragma once

// Dense inner loops used by every model. Each routine has a scalar reference
// implementation and SIMD variants (AVX2+FMA on x86-64, NEON on aarch64); the
// variant is picked once at startup from the CPU features and can be pinned
// with force_isa() for equivalence testing.

#include <cstddef>
#include <cstdint>

namespace lse::kernels {

enum class Isa { scalar, avx2, neon };

const char* isa_name(Isa isa) noexcept;

struct KernelTable {
    Isa isa;
    double (*dot)(const double* a, const double* b, std::size_t n);
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // C[m x n] += A[m x k] * B[k x n], all row-major with leading dimensions.
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc);
    // out[j] = ||v - codebook[j]||^2 for j < count; codebook rows have length dim.
    void (*sq_dist)(const double* v, const double* codebook, std::size_t count, std::size_t dim,
                    double* out);
};

const KernelTable& scalar_table() noexcept;
// Null when the build or the host lacks the extension.
const KernelTable* avx2_table() noexcept;
const KernelTable* neon_table() noexcept;

const KernelTable& active() noexcept;
Isa active_isa() noexcept;
// Returns false (and leaves the selection unchanged) if the ISA is unavailable.
bool force_isa(Isa isa) noexcept;

// Multiply-accumulate instrumentation. Every dense routine below adds its MAC
// count to a thread-local counter while counting is enabled.
std::uint64_t mac_count() noexcept;
void reset_mac_count() noexcept;
void add_macs(std::uint64_t n) noexcept;
bool mac_counting() noexcept;
void set_mac_counting(bool on) noexcept;

class MacCounterScope {
public:
    MacCounterScope() : prev_(mac_counting()) {
        reset_mac_count();
        set_mac_counting(true);
    }
    ~MacCounterScope() { set_mac_counting(prev_); }
    MacCounterScope(const MacCounterScope&) = delete;
    MacCounterScope& operator=(const MacCounterScope&) = delete;
    std::uint64_t count() const noexcept { return mac_count(); }

private:
    bool prev_;
};

// Pauses counting, e.g. around codec encoder/decoder calls.
class MacPause {
public:
    MacPause() : prev_(mac_counting()) { set_mac_counting(false); }
    ~MacPause() { set_mac_counting(prev_); }
    MacPause(const MacPause&) = delete;
    MacPause& operator=(const MacPause&) = delete;

private:
    bool prev_;
};

// Counted front-ends over the active table.
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);
// C += A * B^T with B stored [n x k].
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);
// C += A^T * B with A stored [k x m].
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);
void sq_dist(const double* v, const double* codebook, std::size_t count, std::size_t dim,
             double* out);

}  // namespace lse::kernels
