#include "doctest.h"

#include <cmath>

#include "lse/conformer.hpp"
#include "lse/errors.hpp"
#include "testing.hpp"

using namespace lse;
using namespace lse::testing;

namespace {

// Straight-line single-sequence reference with explicit loops.
using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
    return m;
}

Mat ref_linear(const Mat& x, const ParamSet& ps, const std::string& n) {
    const Tensor& w = ps.at(n + ".w").value;
    const Tensor& b = ps.at(n + ".b").value;
    Mat y(x.size(), std::vector<double>(w.rows()));
    for (std::size_t t = 0; t < x.size(); ++t)
        for (std::size_t o = 0; o < w.rows(); ++o) {
            double s = b(0, o);
            for (std::size_t i = 0; i < w.cols(); ++i) s += x[t][i] * w(o, i);
            y[t][o] = s;
        }
    return y;
}

Mat ref_norm(const Mat& x, const ParamSet& ps, const std::string& n) {
    const Tensor& g = ps.at(n + ".g").value;
    const Tensor& b = ps.at(n + ".b").value;
    Mat y = x;
    for (std::size_t t = 0; t < x.size(); ++t) {
        double mu = 0, var = 0;
        for (double v : x[t]) mu += v;
        mu /= x[t].size();
        for (double v : x[t]) var += (v - mu) * (v - mu);
        var /= x[t].size();
        for (std::size_t c = 0; c < x[t].size(); ++c) y[t][c] = (x[t][c] - mu) / std::sqrt(var + 1e-5) * g(0, c) + b(0, c);
    }
    return y;
}

double silu(double v) { return v / (1 + std::exp(-v)); }

Mat ref_ffn(const Mat& x, const ParamSet& ps, const std::string& n) {
    Mat h = ref_linear(ref_norm(x, ps, n + ".ln"), ps, n + ".up");
    for (auto& r : h)
        for (auto& v : r) v = silu(v);
    return ref_linear(h, ps, n + ".down");
}

void add_into(Mat& a, const Mat& b, double s = 1.0) {
    for (std::size_t t = 0; t < a.size(); ++t)
        for (std::size_t c = 0; c < a[t].size(); ++c) a[t][c] += s * b[t][c];
}

Mat ref_stack(const Tensor& in, const ParamSet& ps, const std::string& prefix, const ConformerConfig& cfg) {
    const std::size_t T = in.rows(), H = cfg.hidden_dim, heads = cfg.num_heads, dh = H / heads, K = cfg.conv_kernel_size;
    Mat h = to_mat(in);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < H; i += 2) {
            const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / H);
            h[t][i] += std::sin(t * f);
            if (i + 1 < H) h[t][i + 1] += std::cos(t * f);
        }
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const std::string p = prefix + "layer" + std::to_string(l) + ".";
        if (cfg.macaron) add_into(h, ref_ffn(h, ps, p + "ff1"), 0.5);
        const Mat a = ref_norm(h, ps, p + "att.ln");
        const Mat q = ref_linear(a, ps, p + "att.q"), k = ref_linear(a, ps, p + "att.k"), v = ref_linear(a, ps, p + "att.v");
        Mat att(T, std::vector<double>(H, 0.0));
        for (std::size_t hd = 0; hd < heads; ++hd)
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t last = cfg.causal ? t : T - 1;
                std::vector<double> sc(last + 1);
                double mx = -1e300, z = 0;
                for (std::size_t s = 0; s <= last; ++s) {
                    double d = 0;
                    for (std::size_t c = 0; c < dh; ++c) d += q[t][hd * dh + c] * k[s][hd * dh + c];
                    sc[s] = d / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, sc[s]);
                }
                for (auto& x : sc) z += (x = std::exp(x - mx));
                for (std::size_t s = 0; s <= last; ++s)
                    for (std::size_t c = 0; c < dh; ++c) att[t][hd * dh + c] += sc[s] / z * v[s][hd * dh + c];
            }
        add_into(h, ref_linear(att, ps, p + "att.o"));
        if (cfg.conv_module) {
            const Mat u = ref_linear(ref_norm(h, ps, p + "conv.ln"), ps, p + "conv.pw1");
            Mat gl(T, std::vector<double>(H));
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t c = 0; c < H; ++c) gl[t][c] = u[t][c] / (1 + std::exp(-u[t][H + c]));
            const Tensor& w = ps.at(p + "conv.dw.w").value;
            const Tensor& b = ps.at(p + "conv.dw.b").value;
            const std::ptrdiff_t left = cfg.causal ? static_cast<std::ptrdiff_t>(K - 1) : static_cast<std::ptrdiff_t>((K - 1) / 2);
            Mat dw(T, std::vector<double>(H));
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t c = 0; c < H; ++c) {
                    double s = b(0, c);
                    for (std::size_t j = 0; j < K; ++j) {
                        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - left;
                        if (src >= 0 && src < static_cast<std::ptrdiff_t>(T)) s += gl[static_cast<std::size_t>(src)][c] * w(j, c);
                    }
                    dw[t][c] = s;
                }
            Mat n = ref_norm(dw, ps, p + "conv.norm");
            for (auto& r : n)
                for (auto& x : r) x = silu(x);
            add_into(h, ref_linear(n, ps, p + "conv.pw2"));
        }
        add_into(h, ref_ffn(h, ps, p + "ff2"), cfg.macaron ? 0.5 : 1.0);
        h = ref_norm(h, ps, p + "out");
    }
    return h;
}

ConformerConfig small_cfg(bool causal) {
    ConformerConfig c;
    c.num_layers = 2;
    c.hidden_dim = 8;
    c.num_heads = 2;
    c.conv_kernel_size = 3;
    c.ff_expansion = 2;
    c.causal = causal;
    return c;
}

Tensor run_stack(const ParamSet& ps, const ConformerConfig& cfg, const Tensor& x) {
    Graph g(false);
    return g.value(conformer_forward(g, ps, "c.", cfg, g.constant(x)));
}

}  // namespace

TEST_CASE("conformer stack matches the straight-line reference") {
    for (bool causal : {false, true})
        for (bool plain : {false, true}) {
            ConformerConfig cfg = small_cfg(causal);
            cfg.conv_module = cfg.macaron = !plain;
            Rng rng(31);
            ParamSet ps;
            add_conformer_params(ps, "c.", cfg, rng);
            for (auto& p : ps)
                if (p->value.rows() == 1) p->value = p->value + random_tensor(rng, 1, p->value.cols(), 0.1);
            const Tensor x = random_tensor(rng, 6, 8);
            const Tensor y = run_stack(ps, cfg, x);
            const Mat r = ref_stack(x, ps, "c.", cfg);
            double d = 0;
            for (std::size_t t = 0; t < 6; ++t)
                for (std::size_t c = 0; c < 8; ++c) d = std::max(d, std::abs(y(t, c) - r[t][c]));
            CHECK(d < 1e-10);
        }
}

TEST_CASE("causal stack ignores future rows, bidirectional stack does not") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const Influence inf = causal_stack_influence(small_cfg(true), 7, seed);
        CHECK(inf.max_outside == 0.0);
        CHECK(inf.min_inside > 1e-8);
    }
    const Influence bi = causal_stack_influence(small_cfg(false), 7, 9);
    CHECK(bi.max_outside > 1e-8);
}

TEST_CASE("incremental decoding with a cache equals the full causal pass") {
    const ConformerConfig cfg = small_cfg(true);
    Rng rng(32);
    ParamSet ps;
    add_conformer_params(ps, "c.", cfg, rng);
    const Tensor x = random_tensor(rng, 9, 8);
    const Tensor full = run_stack(ps, cfg, x);
    ConformerCache cache;
    {
        Graph g(false);
        const Tensor y = g.value(conformer_forward(g, ps, "c.", cfg, g.constant(x.rows_slice(0, 4)), &cache));
        CHECK(max_abs_diff(y, full.rows_slice(0, 4)) < 1e-12);
    }
    for (std::size_t t = 4; t < 9; ++t) {
        Graph g(false);
        const Tensor y = g.value(conformer_forward(g, ps, "c.", cfg, g.constant(x.rows_slice(t, 1)), &cache));
        CHECK(max_abs_diff(y, full.rows_slice(t, 1)) < 1e-12);
    }
    CHECK(cache.length == 9);
}

TEST_CASE("grouped rows behave like independent sequences") {
    const ConformerConfig cfg = small_cfg(false);
    Rng rng(33);
    ParamSet ps;
    add_conformer_params(ps, "c.", cfg, rng);
    const Tensor a = random_tensor(rng, 4, 8), b = random_tensor(rng, 4, 8);
    Tensor both(8, 8);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t c = 0; c < 8; ++c) {
            both(t, c) = a(t, c);
            both(4 + t, c) = b(t, c);
        }
    Graph g(false);
    const Tensor y = g.value(conformer_forward(g, ps, "c.", cfg, g.constant(both), nullptr, 4));
    CHECK(max_abs_diff(y.rows_slice(0, 4), run_stack(ps, cfg, a)) < 1e-12);
    CHECK(max_abs_diff(y.rows_slice(4, 4), run_stack(ps, cfg, b)) < 1e-12);
}

TEST_CASE("causal mask counts") {
    const CausalMask m = causal_mask(5);
    CHECK(m.count() == 15);
    CHECK(m(3, 2));
    CHECK_FALSE(m(2, 3));
}

TEST_CASE("sequence length and width limits") {
    ConformerConfig cfg = small_cfg(false);
    cfg.max_sequence_length = 4;
    Rng rng(34);
    ParamSet ps;
    add_conformer_params(ps, "c.", cfg, rng);
    CHECK_THROWS_AS(run_stack(ps, cfg, Tensor(5, 8)), Error);
    CHECK_THROWS_AS(run_stack(ps, cfg, Tensor(3, 7)), Error);
}

TEST_CASE("token embedding sums the per-stage tables") {
    const std::vector<Tensor> tables{Tensor(3, 2, {1, 2, 3, 4, 5, 6}), Tensor(3, 2, {10, 20, 30, 40, 50, 60})};
    TokenGrid g(2, 2);
    g.at(0, 0) = 2;
    g.at(1, 0) = 1;
    g.at(0, 1) = 0;
    g.at(1, 1) = 2;
    const Tensor e = embed_tokens(g, tables);
    CHECK(e(0, 0) == 35.0);
    CHECK(e(1, 1) == 62.0);
    g.at(1, 1) = 3;
    CHECK_THROWS_AS(embed_tokens(g, tables), Error);
}
