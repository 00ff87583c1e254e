#include "doctest.h"

#include <cmath>
#include <numeric>

#include "lse/errors.hpp"
#include "lse/rvq.hpp"
#include "testing.hpp"

using namespace lse;
using namespace lse::testing;

namespace {

Tensor unit_square() { return Tensor(4, 2, {0, 0, 1, 0, 0, 1, 1, 1}); }

}  // namespace

TEST_CASE("nearest codeword on the unit square") {
    const double v[] = {0.9, 0.2};
    const Nearest n = nearest_codeword(v, unit_square());
    CHECK(n.index == 1);
    CHECK(n.sq_distance == doctest::Approx(0.05));
}

TEST_CASE("nearest codeword: exact hit and lowest-index ties") {
    const Tensor cb = unit_square();
    const double hit[] = {0.0, 1.0};
    CHECK(nearest_codeword(hit, cb).index == 2);
    CHECK(nearest_codeword(hit, cb).sq_distance == 0.0);
    const double mid[] = {0.5, 0.0};  // equidistant from codewords 0 and 1
    CHECK(nearest_codeword(mid, cb).index == 0);
    const double centre[] = {0.5, 0.5};
    CHECK(nearest_codeword(centre, cb).index == 0);
}

TEST_CASE("nearest codeword rejects non-finite input") {
    const double v[] = {NAN, 0.0};
    CHECK_THROWS_AS(nearest_codeword(v, unit_square()), Error);
}

TEST_CASE("quantize matches the stage-wise oracle") {
    Rng rng(21);
    const CodebookSet cb = random_codebooks(rng, 2, 4, 2, false);
    const LatentSeq x{random_tensor(rng, 50, 2)};
    const QuantizeResult q = rvq_quantize(x, cb);
    for (std::size_t t = 0; t < 50; ++t) {
        const auto ref = oracle_rvq_tokens(x.values.row(t), cb);
        for (std::size_t n = 0; n < 2; ++n) CHECK(q.tokens.at(n, t) == ref[n]);
    }
}

TEST_CASE("sum of nearest codewords round-trips exactly") {
    CodebookSet cb;
    cb.stages.push_back(Tensor(3, 2, {0, 0, 4, 0, 0, 4}));
    cb.stages.push_back(Tensor(3, 2, {0, 0, 0.5, 0.25, -0.5, 0.25}));
    const LatentSeq x{Tensor(2, 2, {4.5, 0.25, -0.5, 4.25})};
    const QuantizeResult q = rvq_quantize(x, cb);
    CHECK(q.tokens.at(0, 0) == 1);
    CHECK(q.tokens.at(1, 0) == 1);
    CHECK(q.tokens.at(0, 1) == 2);
    CHECK(q.tokens.at(1, 1) == 2);
    CHECK(q.reconstruction.values == x.values);
}

TEST_CASE("dequantize equals the quantizer reconstruction bit for bit") {
    Rng rng(22);
    const CodebookSet cb = random_codebooks(rng, 4, 64, 16);
    const LatentSeq x{random_tensor(rng, 30, 16)};
    const QuantizeResult q = rvq_quantize(x, cb);
    CHECK(rvq_dequantize(q.tokens, cb).values == q.reconstruction.values);
}

TEST_CASE("telescoping prefixes and non-increasing residuals with zero codewords") {
    Rng rng(23);
    const CodebookSet cb = random_codebooks(rng, 4, 64, 16);
    const LatentSeq x{random_tensor(rng, 100, 16)};
    std::vector<double> prev(100);
    for (std::size_t t = 0; t < 100; ++t) prev[t] = std::sqrt(Tensor(1, 16, std::vector<double>(x.values.row(t).begin(), x.values.row(t).end())).squared_norm());
    LatentSeq last{Tensor(100, 16)};
    for (std::size_t n = 1; n <= 4; ++n) {
        const QuantizeResult q = rvq_quantize_prefix(x, cb, n);
        for (std::size_t t = 0; t < 100; ++t) {
            double r = 0.0;
            for (std::size_t l = 0; l < 16; ++l) {
                const double e = x.values(t, l) - q.reconstruction.values(t, l);
                r += e * e;
                CHECK(q.reconstruction.values(t, l) == last.values(t, l) + cb.stages[n - 1](static_cast<std::size_t>(q.tokens.at(n - 1, t)), l));
            }
            CHECK(std::sqrt(r) <= prev[t] + 1e-12);
            prev[t] = std::sqrt(r);
        }
        last = q.reconstruction;
    }
}

TEST_CASE("dequantize special cases and linearity") {
    Rng rng(24);
    CodebookSet cb = random_codebooks(rng, 3, 8, 4);
    CHECK(rvq_dequantize(TokenGrid(3, 5, 0), cb).values.max_abs() == 0.0);
    const TokenGrid tok = random_tokens(rng, 3, 5, 8);
    const Tensor base = rvq_dequantize(tok, cb).values;
    CodebookSet scaled = cb;
    for (auto& s : scaled.stages) s *= 2.5;
    CHECK(max_abs_diff(rvq_dequantize(tok, scaled).values, base * 2.5) < 1e-12);
    CodebookSet one;
    one.stages.push_back(cb.stages[1]);
    const TokenGrid t1 = random_tokens(rng, 1, 5, 8);
    const Tensor d = rvq_dequantize(t1, one).values;
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t l = 0; l < 4; ++l) CHECK(d(t, l) == one.stages[0](static_cast<std::size_t>(t1.at(0, t)), l));
}

TEST_CASE("dequantize rejects out-of-range tokens") {
    Rng rng(25);
    const CodebookSet cb = random_codebooks(rng, 2, 4, 2);
    TokenGrid g(2, 3, 0);
    g.at(1, 2) = 4;
    CHECK_THROWS_AS(rvq_dequantize(g, cb), Error);
    g.at(1, 2) = -1;
    CHECK_THROWS_AS(rvq_dequantize(g, cb), Error);
}

TEST_CASE("quantize rejects a dimension mismatch") {
    Rng rng(26);
    const CodebookSet cb = random_codebooks(rng, 2, 4, 3);
    CHECK_THROWS_AS(rvq_quantize(LatentSeq{Tensor(2, 2)}, cb), Error);
}

TEST_CASE("large codebook shapes are accepted") {
    Rng rng(27);
    const CodebookSet cb = random_codebooks(rng, 12, 1024, 1024);
    CHECK_NOTHROW(cb.validate());
    const QuantizeResult q = rvq_quantize(LatentSeq{random_tensor(rng, 2, 1024)}, cb);
    CHECK(q.tokens.stages() == 12);
    CHECK(q.tokens.frames() == 2);
}

TEST_CASE("codebook validation catches duplicates") {
    CodebookSet cb;
    cb.stages.push_back(Tensor(3, 2, {0, 0, 1, 1, 1, 1}));
    CHECK_THROWS_AS(cb.validate(), Error);
}

TEST_CASE("soft labels: worked instance") {
    // squared distances 0.1, 0.5, 2.0 from the origin
    const Tensor cb(3, 1, {std::sqrt(0.1), std::sqrt(0.5), std::sqrt(2.0)});
    const double v[] = {0.0};
    const auto p = soft_labels(v, cb);
    const double z = std::exp(-0.1) + std::exp(-0.5) + std::exp(-2.0);
    CHECK(p[0] == doctest::Approx(std::exp(-0.1) / z).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(0.54948).epsilon(1e-4));
    CHECK(p[1] == doctest::Approx(0.36833).epsilon(1e-4));
    CHECK(p[2] == doctest::Approx(0.08219).epsilon(1e-4));
}

TEST_CASE("soft labels: normalisation, symmetry, sharpening and argmax") {
    const Tensor cb(3, 1, {-1.0, 1.0, 50.0});
    const double v[] = {0.0};
    const auto p = soft_labels(v, cb);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));
    Rng rng(28);
    const Tensor c2 = random_tensor(rng, 16, 3);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor x = random_tensor(rng, 1, 3);
        const auto q = soft_labels(x.row(0), c2);
        CHECK(std::accumulate(q.begin(), q.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
        const auto arg = static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
        CHECK(arg == nearest_codeword(x.row(0), c2).index);
    }
    SoftLabelOptions cold;
    cold.temperature = 1e-3;
    const auto sharp = soft_labels(c2.row(5), c2, cold);
    CHECK(sharp[5] > 1.0 - 1e-9);
    const auto warm = soft_labels(c2.row(5), c2);
    for (std::size_t k = 0; k < warm.size(); ++k)
        if (k != 5) CHECK(warm[k] < warm[5]);
    SoftLabelOptions bad;
    bad.temperature = 0.0;
    CHECK_THROWS_AS(soft_labels(v, cb, bad), Error);
}
