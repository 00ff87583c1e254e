#include "doctest.h"

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "lse/kernels.hpp"

using namespace lse::kernels;

namespace {

std::vector<double> rand_vec(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

std::vector<const KernelTable*> simd_tables() {
    std::vector<const KernelTable*> out;
    if (auto* t = avx2_table()) out.push_back(t);
    if (auto* t = neon_table()) out.push_back(t);
    return out;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

}  // namespace

TEST_CASE("scalar dot and axpy on a hand example") {
    const KernelTable& s = scalar_table();
    const double a[] = {1, 2, 3}, b[] = {4, -5, 6};
    CHECK(s.dot(a, b, 3) == doctest::Approx(12.0));
    double y[] = {1, 1, 1};
    s.axpy(2.0, a, y, 3);
    CHECK(y[0] == 3.0);
    CHECK(y[2] == 7.0);
}

TEST_CASE("scalar gemm matches the triple loop") {
    std::mt19937_64 rng(3);
    const std::size_t m = 5, n = 7, k = 4;
    auto a = rand_vec(rng, m * k), b = rand_vec(rng, k * n);
    std::vector<double> c(m * n, 0.5), ref = c;
    scalar_table().gemm_nn(m, n, k, a.data(), k, b.data(), n, c.data(), n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) ref[i * n + j] += a[i * k + p] * b[p * n + j];
    CHECK(max_diff(c, ref) < 1e-14);
}

TEST_CASE("simd tables agree with the scalar reference") {
    std::mt19937_64 rng(11);
    const KernelTable& s = scalar_table();
    for (const KernelTable* t : simd_tables()) {
        INFO(isa_name(t->isa));
        for (std::size_t n : {1u, 3u, 4u, 7u, 16u, 33u, 130u}) {
            auto a = rand_vec(rng, n), b = rand_vec(rng, n);
            CHECK(std::abs(t->dot(a.data(), b.data(), n) - s.dot(a.data(), b.data(), n)) < 1e-12);
            auto y1 = b, y2 = b;
            t->axpy(0.3, a.data(), y1.data(), n);
            s.axpy(0.3, a.data(), y2.data(), n);
            CHECK(max_diff(y1, y2) < 1e-14);
        }
        for (auto [m, n, k] : std::vector<std::array<std::size_t, 3>>{{1, 1, 1}, {3, 5, 7}, {8, 8, 8}, {13, 17, 9}, {32, 33, 65}}) {
            auto a = rand_vec(rng, m * k), b = rand_vec(rng, k * n);
            std::vector<double> c1(m * n, 0.25), c2 = c1;
            t->gemm_nn(m, n, k, a.data(), k, b.data(), n, c1.data(), n);
            s.gemm_nn(m, n, k, a.data(), k, b.data(), n, c2.data(), n);
            CHECK(max_diff(c1, c2) < 1e-12);
        }
        for (std::size_t dim : {1u, 4u, 5u, 16u, 19u}) {
            auto v = rand_vec(rng, dim), cb = rand_vec(rng, 37 * dim);
            std::vector<double> o1(37), o2(37);
            t->sq_dist(v.data(), cb.data(), 37, dim, o1.data());
            s.sq_dist(v.data(), cb.data(), 37, dim, o2.data());
            CHECK(max_diff(o1, o2) < 1e-12);
        }
    }
}

TEST_CASE("force_isa switches the active table") {
    const Isa before = active_isa();
    CHECK(force_isa(Isa::scalar));
    CHECK(active_isa() == Isa::scalar);
    CHECK(&active() == &scalar_table());
    if (!avx2_table()) CHECK_FALSE(force_isa(Isa::avx2));
    force_isa(before);
    CHECK(active_isa() == before);
}

TEST_CASE("mac counter counts gemm, distances and dots") {
    std::vector<double> a(6 * 4, 1.0), b(4 * 5, 1.0), c(6 * 5, 0.0), out(3);
    MacCounterScope scope;
    gemm_nn(6, 5, 4, a.data(), 4, b.data(), 5, c.data(), 5);
    CHECK(scope.count() == 120);
    sq_dist(a.data(), b.data(), 3, 4, out.data());
    CHECK(scope.count() == 132);
    {
        MacPause pause;
        dot(a.data(), b.data(), 4);
    }
    CHECK(scope.count() == 132);
    dot(a.data(), b.data(), 4);
    CHECK(scope.count() == 136);
}
