#include <atomic>
#include <cstdlib>
#include <cstring>
#include <vector>

#include "lse/kernels.hpp"

namespace lse::kernels {
namespace {

const KernelTable* pick_default() noexcept {
    // LSE_ISA=scalar|avx2|neon overrides detection (used by the reference runs).
    if (const char* env = std::getenv("LSE_ISA")) {
        if (std::strcmp(env, "scalar") == 0) return &scalar_table();
        if (std::strcmp(env, "avx2") == 0 && avx2_table()) return avx2_table();
        if (std::strcmp(env, "neon") == 0 && neon_table()) return neon_table();
    }
    if (const KernelTable* t = avx2_table()) return t;
    if (const KernelTable* t = neon_table()) return t;
    return &scalar_table();
}

std::atomic<const KernelTable*>& current() noexcept {
    static std::atomic<const KernelTable*> table{pick_default()};
    return table;
}

thread_local std::uint64_t t_macs = 0;
thread_local bool t_counting = false;

thread_local std::vector<double> t_pack;

}  // namespace

const char* isa_name(Isa isa) noexcept {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "?";
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_relaxed); }
Isa active_isa() noexcept { return active().isa; }

bool force_isa(Isa isa) noexcept {
    const KernelTable* t = nullptr;
    switch (isa) {
        case Isa::scalar: t = &scalar_table(); break;
        case Isa::avx2: t = avx2_table(); break;
        case Isa::neon: t = neon_table(); break;
    }
    if (!t) return false;
    current().store(t, std::memory_order_relaxed);
    return true;
}

std::uint64_t mac_count() noexcept { return t_macs; }
void reset_mac_count() noexcept { t_macs = 0; }
void add_macs(std::uint64_t n) noexcept {
    if (t_counting) t_macs += n;
}
bool mac_counting() noexcept { return t_counting; }
void set_mac_counting(bool on) noexcept { t_counting = on; }

double dot(const double* a, const double* b, std::size_t n) {
    add_macs(n);
    return active().dot(a, b, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    add_macs(n);
    active().axpy(alpha, x, y, n);
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    if (m == 0 || n == 0 || k == 0) return;
    add_macs(static_cast<std::uint64_t>(m) * n * k);
    active().gemm_nn(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    if (m == 0 || n == 0 || k == 0) return;
    add_macs(static_cast<std::uint64_t>(m) * n * k);
    // Pack B^T as [k x n] so the row-streaming NN kernel applies.
    t_pack.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) t_pack[p * n + j] = b[j * ldb + p];
    active().gemm_nn(m, n, k, a, lda, t_pack.data(), n, c, ldc);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    if (m == 0 || n == 0 || k == 0) return;
    add_macs(static_cast<std::uint64_t>(m) * n * k);
    t_pack.resize(m * k);
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t i = 0; i < m; ++i) t_pack[i * k + p] = a[p * lda + i];
    active().gemm_nn(m, n, k, t_pack.data(), k, b, ldb, c, ldc);
}

void sq_dist(const double* v, const double* codebook, std::size_t count, std::size_t dim,
             double* out) {
    add_macs(static_cast<std::uint64_t>(count) * dim);
    active().sq_dist(v, codebook, count, dim, out);
}

}  // namespace lse::kernels
