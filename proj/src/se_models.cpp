#include "lse/se_models.hpp"

#include <cmath>
#include <numbers>

#include "json.hpp"
#include "lse/checkpoint.hpp"
#include "lse/errors.hpp"
#include "lse/kernels.hpp"

namespace lse {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

ConformerConfig depth_stack(const ModelConfig& c) {
    ConformerConfig d = c.stack(c.depth_layers, true);
    d.conv_module = false;
    d.macaron = false;
    return d;
}

void add_linear(ParamSet& ps, const std::string& name, std::size_t out, std::size_t in, Rng& rng) {
    ps.add(name + ".w", fan_in_init(out, in, in, rng));
    ps.add(name + ".b", Tensor(1, out), false);
}

Var lin(Graph& g, const ParamSet& ps, const std::string& name, Var x) {
    return g.linear(x, g.param(ps.at(name + ".w")), g.param(ps.at(name + ".b")));
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.cols(); ++k)
        if (logits(row, k) > logits(row, best)) best = k;
    return best;
}

Tensor wav_column(const Waveform& w, std::size_t factor) {
    require(w.size() >= factor, ErrorKind::length, "waveform shorter than one codec frame");
    w.validate();
    const std::size_t n = w.size() / factor * factor;
    Tensor t(n, 1);
    std::copy_n(w.samples.data(), n, t.data());
    return t;
}

void require_variant(const SeModel& m, std::initializer_list<Variant> ok, const char* op) {
    for (Variant v : ok)
        if (m.variant == v) return;
    fail(ErrorKind::usage, std::string(op) + " is not defined for variant " + std::string(variant_name(m.variant)));
}

void check_tokens(const SeModel& m, const TokenGrid& t, const char* what) {
    require(t.stages() == m.stages() && t.frames() >= 1, ErrorKind::shape,
            std::string(what) + ": token grid has " + std::to_string(t.stages()) + " stages, model expects " +
                std::to_string(m.stages()));
    for (int k : t.raw())
        require(k >= 0 && static_cast<std::size_t>(k) < m.codebook_size(), ErrorKind::index,
                std::string(what) + ": token " + std::to_string(k) + " out of range");
}

void check_latent(const SeModel& m, const LatentSeq& z, const char* what) {
    require(z.latent_dim() == m.latent_dim() && z.num_frames() >= 1, ErrorKind::shape,
            std::string(what) + ": latent " + z.values.shape_str() + " does not match dim " +
                std::to_string(m.latent_dim()));
}

std::vector<Var> heads(Graph& g, const SeModel& m, Var h) {
    std::vector<Var> out;
    for (std::size_t n = 0; n < m.stages(); ++n) out.push_back(lin(g, m.params, "head." + std::to_string(n), h));
    return out;
}

Var nar_stack(Graph& g, const SeModel& m, Var x) {
    return conformer_forward(g, m.params, "nar.", m.cfg.stack(m.cfg.nar_layers, false), x);
}

Var d_ar_graph(Graph& g, const SeModel& m, const TokenGrid& y, const TokenGrid& x, std::vector<Var>& logits) {
    const ParamSet& ps = m.params;
    const std::size_t T = y.frames(), N = m.stages();
    require(x.stages() == N && x.frames() == T, ErrorKind::shape, "d-ar: noisy and teacher grids differ in shape");
    Var a = conformer_forward(g, ps, "noisy.", m.cfg.stack(m.cfg.noisy_layers, false),
                              embed_tokens(g, ps, "noisy_emb.", y));
    Var start = g.param(ps.at("start"));
    Var tin = start;
    if (T > 1) tin = g.concat_rows(start, g.slice_rows(embed_tokens(g, ps, "clean_emb.", x), 0, T - 1));
    Var b = conformer_forward(g, ps, "temporal.", m.cfg.stack(m.cfg.temporal_layers, true), tin);
    Var ctx = g.add(a, b);

    std::vector<std::size_t> rep(T * N), order(T * N);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t n = 0; n < N; ++n) {
            rep[t * N + n] = t;
            order[t * N + n] = n * T + t;
        }
    std::vector<std::size_t> zeros(T, 0);
    Var tok = g.gather_rows(g.param(ps.at("depth_start")), zeros);
    for (std::size_t n = 1; n < N; ++n)
        tok = g.concat_rows(tok, g.embedding(g.param(ps.at("depth_emb." + std::to_string(n - 1))), x.stage_row(n - 1)));
    Var din = g.add(g.gather_rows(ctx, rep), g.gather_rows(tok, order));
    Var d = conformer_forward(g, ps, "depth.", depth_stack(m.cfg), din, nullptr, N);
    for (std::size_t n = 0; n < N; ++n) {
        std::vector<std::size_t> rows(T);
        for (std::size_t t = 0; t < T; ++t) rows[t] = t * N + n;
        logits.push_back(lin(g, ps, "head." + std::to_string(n), g.gather_rows(d, rows)));
    }
    return d;
}

Var c_ar_graph(Graph& g, const SeModel& m, const LatentSeq& ybar, const LatentSeq& xbar) {
    const ParamSet& ps = m.params;
    const std::size_t T = ybar.num_frames();
    require(xbar.num_frames() == T, ErrorKind::shape, "c-ar: noisy and teacher latents differ in length");
    Var p = lin(g, ps, "noisy_proj", g.constant(ybar.values));
    Var c = g.param(ps.at("start"));
    if (T > 1) c = g.concat_rows(c, lin(g, ps, "clean_proj", g.constant(xbar.values.rows_slice(0, T - 1))));
    Var h = conformer_forward(g, ps, "ar.", m.cfg.stack(m.cfg.ar_layers, true), g.concat_rows(p, c));
    return lin(g, ps, "out", g.slice_rows(h, T, T));
}

Var encoder_copy(Graph& g, const SeModel& m, const Waveform& wav) {
    kernels::MacPause pause;
    return encoder_graph(g, m.params, "enc.", m.codec_cfg, g.constant(wav_column(wav, m.codec_cfg.downsample_factor())));
}

// Soft-label logits against frozen codebooks along the hard residual path.
std::vector<Var> soft_label_logits(Graph& g, const SeModel& m, Var e, const CodebookSet& cb) {
    kernels::MacPause pause;
    const Tensor& ev = g.value(e);
    Tensor hard(ev.rows(), ev.cols());
    std::vector<Var> logits;
    for (std::size_t n = 0; n < m.stages(); ++n) {
        Var r = n == 0 ? e : g.sub(e, g.constant(hard));
        logits.push_back(g.codebook_logits(r, cb.stages[n], m.cfg.soft_label_temperature, m.cfg.soft_label_squared));
        const Tensor& rv = g.value(r);
        for (std::size_t t = 0; t < rv.rows(); ++t) {
            const std::size_t k = nearest_codeword(rv.row(t), cb.stages[n]).index;
            for (std::size_t l = 0; l < rv.cols(); ++l) hard(t, l) += cb.stages[n](k, l);
        }
    }
    return logits;
}

DiscreteLogits to_logits(const Graph& g, const std::vector<Var>& vars) {
    DiscreteLogits out;
    for (Var v : vars) out.stages.push_back(g.value(v));
    return out;
}

}  // namespace

SeModel make_model(Variant variant, const ModelConfig& cfg, const Codec& codec, std::uint64_t seed) {
    cfg.validate();
    SeModel m;
    m.variant = variant;
    m.cfg = cfg;
    m.codec_cfg = codec.config();
    Rng rng(derive_seed(seed, 0x5E + static_cast<std::uint64_t>(variant)));
    ParamSet& ps = m.params;
    const std::size_t H = cfg.hidden_dim, N = m.stages(), K = m.codebook_size(), L = m.latent_dim();
    auto add_heads = [&] {
        for (std::size_t n = 0; n < N; ++n) add_linear(ps, "head." + std::to_string(n), K, H, rng);
    };
    auto copy_encoder = [&] {
        Rng scratch(0);
        add_encoder_params(ps, "enc.", m.codec_cfg, scratch);
        ps.copy_from(codec.params(), "enc.", "enc.");
    };
    switch (variant) {
        case Variant::d_ar:
            add_embedding_params(ps, "noisy_emb.", N, K, H, rng);
            add_conformer_params(ps, "noisy.", cfg.stack(cfg.noisy_layers, false), rng);
            add_embedding_params(ps, "clean_emb.", N, K, H, rng);
            ps.add("start", Tensor(1, H), false);
            add_conformer_params(ps, "temporal.", cfg.stack(cfg.temporal_layers, true), rng);
            for (std::size_t n = 0; n + 1 < N; ++n)
                ps.add("depth_emb." + std::to_string(n), normal_init(K, H, 1.0, rng));
            ps.add("depth_start", Tensor(1, H), false);
            add_conformer_params(ps, "depth.", depth_stack(cfg), rng);
            add_heads();
            break;
        case Variant::d_nar:
            add_embedding_params(ps, "noisy_emb.", N, K, H, rng);
            add_conformer_params(ps, "nar.", cfg.stack(cfg.nar_layers, false), rng);
            add_heads();
            break;
        case Variant::d_nar_star:
            add_linear(ps, "in_proj", H, L, rng);
            add_conformer_params(ps, "nar.", cfg.stack(cfg.nar_layers, false), rng);
            add_heads();
            break;
        case Variant::c_ar:
            add_linear(ps, "noisy_proj", H, L, rng);
            add_linear(ps, "clean_proj", H, L, rng);
            ps.add("start", Tensor(1, H), false);
            add_conformer_params(ps, "ar.", cfg.stack(cfg.ar_layers, true), rng);
            add_linear(ps, "out", L, H, rng);
            break;
        case Variant::c_nar:
            add_linear(ps, "in_proj", H, L, rng);
            add_conformer_params(ps, "nar.", cfg.stack(cfg.nar_layers, false), rng);
            add_linear(ps, "out", L, H, rng);
            break;
        case Variant::c_ft:
        case Variant::d_ft:
            copy_encoder();
            break;
        case Variant::c_nar_ft:
            copy_encoder();
            add_linear(ps, "in_proj", H, L, rng);
            add_conformer_params(ps, "nar.", cfg.stack(cfg.nar_layers, false), rng);
            add_linear(ps, "out", L, H, rng);
            break;
    }
    return m;
}

DiscreteLogits DiscreteLogits::normalized() const {
    DiscreteLogits out = *this;
    for (Tensor& s : out.stages)
        for (std::size_t t = 0; t < s.rows(); ++t) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < s.cols(); ++k) mx = std::max(mx, s(t, k));
            double z = 0.0;
            for (std::size_t k = 0; k < s.cols(); ++k) z += (s(t, k) = std::exp(s(t, k) - mx));
            for (std::size_t k = 0; k < s.cols(); ++k) s(t, k) /= z;
        }
    return out;
}

TokenGrid DiscreteLogits::argmax() const {
    TokenGrid g(stages.size(), frames());
    for (std::size_t n = 0; n < stages.size(); ++n)
        for (std::size_t t = 0; t < frames(); ++t) g.at(n, t) = static_cast<int>(argmax_row(stages[n], t));
    return g;
}

GraphOutput model_graph(Graph& g, const SeModel& m, const ModelInput& in, const ModelTarget* target,
                        const CodebookSet& codebooks) {
    GraphOutput out;
    const ParamSet& ps = m.params;
    switch (m.variant) {
        case Variant::d_ar:
            require(target != nullptr, ErrorKind::usage, "d-ar needs teacher tokens");
            check_tokens(m, in.noisy_tokens, "d-ar noisy");
            check_tokens(m, target->clean_tokens, "d-ar teacher");
            d_ar_graph(g, m, in.noisy_tokens, target->clean_tokens, out.logits);
            break;
        case Variant::d_nar:
            check_tokens(m, in.noisy_tokens, "d-nar");
            out.logits = heads(g, m, nar_stack(g, m, embed_tokens(g, ps, "noisy_emb.", in.noisy_tokens)));
            break;
        case Variant::d_nar_star:
            check_latent(m, in.noisy_latent, "d-nar-star");
            out.logits = heads(g, m, nar_stack(g, m, lin(g, ps, "in_proj", g.constant(in.noisy_latent.values))));
            break;
        case Variant::c_ar:
            require(target != nullptr, ErrorKind::usage, "c-ar needs teacher latents");
            check_latent(m, in.noisy_latent, "c-ar noisy");
            check_latent(m, target->clean_latent, "c-ar teacher");
            out.mean = c_ar_graph(g, m, in.noisy_latent, target->clean_latent);
            break;
        case Variant::c_nar:
            check_latent(m, in.noisy_latent, "c-nar");
            out.mean = lin(g, ps, "out", nar_stack(g, m, lin(g, ps, "in_proj", g.constant(in.noisy_latent.values))));
            break;
        case Variant::c_ft:
            out.mean = encoder_copy(g, m, in.noisy_wav);
            break;
        case Variant::d_ft:
            out.logits = soft_label_logits(g, m, encoder_copy(g, m, in.noisy_wav), codebooks);
            break;
        case Variant::c_nar_ft:
            out.mean = lin(g, ps, "out", nar_stack(g, m, lin(g, ps, "in_proj", encoder_copy(g, m, in.noisy_wav))));
            break;
    }
    return out;
}

LossTerms nll_loss(Graph& g, const GraphOutput& out, const ModelTarget& target, bool discrete) {
    LossTerms lt;
    if (discrete) {
        require(!out.logits.empty() && !out.mean.valid(), ErrorKind::usage, "nll_loss: expected discrete logits");
        const TokenGrid& y = target.clean_tokens;
        require(y.stages() == out.logits.size(), ErrorKind::shape, "nll_loss: stage count mismatch");
        Var sum;
        for (std::size_t n = 0; n < out.logits.size(); ++n) {
            require(g.value(out.logits[n]).rows() == y.frames(), ErrorKind::shape, "nll_loss: frame count mismatch");
            Var ce = g.cross_entropy(out.logits[n], y.stage_row(n));
            sum = sum.valid() ? g.add(sum, ce) : ce;
        }
        lt.loss = g.scale(sum, 1.0 / static_cast<double>(out.logits.size()));
        lt.nll = lt.mse_or_ce = g.value(lt.loss)[0];
        return lt;
    }
    require(out.mean.valid() && out.logits.empty(), ErrorKind::usage, "nll_loss: expected a continuous prediction");
    const Tensor& mv = g.value(out.mean);
    const Tensor& xv = target.clean_latent.values;
    require(mv.same_shape(xv), ErrorKind::shape,
            "nll_loss: prediction " + mv.shape_str() + " vs target " + xv.shape_str());
    const double T = static_cast<double>(mv.rows());
    const double L = static_cast<double>(mv.cols());
    Var sq = g.sum(g.square(g.sub(out.mean, g.constant(xv))));
    lt.loss = g.scale(sq, 0.5 / T);
    lt.mse_or_ce = g.value(sq)[0] / T;
    lt.constant = L * kHalfLog2Pi;
    lt.nll = g.value(lt.loss)[0] + lt.constant;
    return lt;
}

double cross_entropy(const DiscreteLogits& logits, const TokenGrid& target) {
    require(logits.stages.size() == target.stages() && logits.frames() == target.frames(), ErrorKind::shape,
            "cross_entropy: shape mismatch");
    double acc = 0.0;
    for (std::size_t n = 0; n < target.stages(); ++n) {
        const Tensor& s = logits.stages[n];
        for (std::size_t t = 0; t < target.frames(); ++t) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < s.cols(); ++k) mx = std::max(mx, s(t, k));
            double z = 0.0;
            for (std::size_t k = 0; k < s.cols(); ++k) z += std::exp(s(t, k) - mx);
            acc += mx + std::log(z) - s(t, static_cast<std::size_t>(target.at(n, t)));
        }
    }
    return acc / static_cast<double>(target.stages() * target.frames());
}

double gaussian_nll_total(const Tensor& mean, const LatentSeq& target) {
    require(mean.same_shape(target.values), ErrorKind::shape, "gaussian_nll_total: shape mismatch");
    double sq = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) {
        const double d = target.values[i] - mean[i];
        sq += d * d;
    }
    return 0.5 * sq + static_cast<double>(mean.size()) * kHalfLog2Pi;
}

DiscreteLogits d_ar_forward(const SeModel& m, const TokenGrid& noisy, const TokenGrid& teacher) {
    require_variant(m, {Variant::d_ar}, "d_ar_forward");
    Graph g(false);
    ModelTarget tgt{teacher, {}};
    return to_logits(g, model_graph(g, m, ModelInput{noisy, {}, {}}, &tgt, {}).logits);
}

DiscreteLogits d_nar_forward(const SeModel& m, const TokenGrid& noisy) {
    require_variant(m, {Variant::d_nar}, "d_nar_forward with tokens");
    Graph g(false);
    return to_logits(g, model_graph(g, m, ModelInput{noisy, {}, {}}, nullptr, {}).logits);
}

DiscreteLogits d_nar_forward(const SeModel& m, const LatentSeq& noisy) {
    require_variant(m, {Variant::d_nar_star}, "d_nar_forward with latents");
    Graph g(false);
    return to_logits(g, model_graph(g, m, ModelInput{{}, noisy, {}}, nullptr, {}).logits);
}

Tensor c_ar_forward(const SeModel& m, const LatentSeq& teacher, const LatentSeq& noisy) {
    require_variant(m, {Variant::c_ar}, "c_ar_forward");
    Graph g(false);
    ModelTarget tgt{{}, teacher};
    return g.value(model_graph(g, m, ModelInput{{}, noisy, {}}, &tgt, {}).mean);
}

Tensor c_nar_forward(const SeModel& m, const LatentSeq& noisy) {
    require_variant(m, {Variant::c_nar}, "c_nar_forward");
    Graph g(false);
    return g.value(model_graph(g, m, ModelInput{{}, noisy, {}}, nullptr, {}).mean);
}

FtOutput ft_forward(const SeModel& m, const Waveform& noisy, const CodebookSet& codebooks) {
    require_variant(m, {Variant::c_ft, Variant::d_ft, Variant::c_nar_ft}, "ft_forward");
    Graph g(false);
    GraphOutput out = model_graph(g, m, ModelInput{{}, {}, noisy}, nullptr, codebooks);
    FtOutput r;
    if (out.mean.valid()) r.mean = g.value(out.mean);
    r.logits = to_logits(g, out.logits);
    return r;
}

TokenGrid d_ar_decode(const SeModel& m, const TokenGrid& noisy, DecodeStats* stats, bool kv_cache) {
    require_variant(m, {Variant::d_ar}, "d_ar_decode");
    check_tokens(m, noisy, "d_ar_decode");
    const ParamSet& ps = m.params;
    const std::size_t T = noisy.frames(), N = m.stages(), H = m.cfg.hidden_dim;
    const ConformerConfig ncfg = m.cfg.stack(m.cfg.noisy_layers, false);
    const ConformerConfig tcfg = m.cfg.stack(m.cfg.temporal_layers, true), dcfg = depth_stack(m.cfg);
    auto noisy_context = [&] {
        Graph g(false);
        return g.value(conformer_forward(g, ps, "noisy.", ncfg, embed_tokens(g, ps, "noisy_emb.", noisy)));
    };
    std::vector<Tensor> clean_tables;
    for (std::size_t n = 0; n < N; ++n) clean_tables.push_back(ps.at("clean_emb." + std::to_string(n)).value);
    TokenGrid x(N, T);
    // Temporal input row for frame t: start vector or the summed embeddings of frame t - 1.
    auto temporal_input = [&](std::size_t t) {
        if (t == 0) return ps.at("start").value;
        TokenGrid prev(N, 1);
        for (std::size_t n = 0; n < N; ++n) prev.at(n, 0) = x.at(n, t - 1);
        return embed_tokens(prev, clean_tables);
    };
    auto depth_token = [&](std::size_t t, std::size_t n) {
        if (n == 0) return ps.at("depth_start").value;
        return ps.at("depth_emb." + std::to_string(n - 1)).value.rows_slice(static_cast<std::size_t>(x.at(n - 1, t)), 1);
    };
    auto choose = [&](Graph& g, Var d, std::size_t t, std::size_t n) {
        const std::size_t last = g.value(d).rows() - 1;
        const Tensor& lg = g.value(lin(g, ps, "head." + std::to_string(n), g.slice_rows(d, last, 1)));
        x.at(n, t) = static_cast<int>(argmax_row(lg, 0));
    };

    DecodeStats st;
    if (kv_cache) {
        const Tensor a = noisy_context();
        ConformerCache tcache;
        for (std::size_t t = 0; t < T; ++t) {
            Tensor ctx;
            {
                Graph g(false);
                ctx = g.value(conformer_forward(g, ps, "temporal.", tcfg, g.constant(temporal_input(t)), &tcache));
            }
            ++st.temporal_steps;
            for (std::size_t c = 0; c < H; ++c) ctx(0, c) += a(t, c);
            ConformerCache dcache;
            for (std::size_t n = 0; n < N; ++n) {
                Graph g(false);
                Var d = conformer_forward(g, ps, "depth.", dcfg, g.constant(ctx + depth_token(t, n)), &dcache);
                choose(g, d, t, n);
                ++st.depth_steps;
            }
        }
    } else {
        // Every generated token re-runs the three stacks on the current prefix.
        for (std::size_t t = 0; t < T; ++t) {
            ++st.temporal_steps;
            for (std::size_t n = 0; n < N; ++n) {
                const Tensor a = noisy_context();
                Tensor tin(t + 1, H);
                for (std::size_t s = 0; s <= t; ++s) {
                    const Tensor row = temporal_input(s);
                    std::copy_n(row.data(), H, tin.data() + s * H);
                }
                Graph g(false);
                const Tensor b = g.value(conformer_forward(g, ps, "temporal.", tcfg, g.constant(tin)));
                Tensor din(n + 1, H);
                for (std::size_t j = 0; j <= n; ++j) {
                    const Tensor tok = depth_token(t, j);
                    for (std::size_t c = 0; c < H; ++c) din(j, c) = a(t, c) + b(t, c) + tok[c];
                }
                Var d = conformer_forward(g, ps, "depth.", dcfg, g.constant(din));
                choose(g, d, t, n);
                ++st.depth_steps;
            }
        }
    }
    if (stats) *stats = st;
    return x;
}

LatentSeq c_ar_decode(const SeModel& m, const LatentSeq& noisy, const CodebookSet& codebooks,
                      bool quantize_feedback, DecodeStats* stats, bool kv_cache) {
    require_variant(m, {Variant::c_ar}, "c_ar_decode");
    check_latent(m, noisy, "c_ar_decode");
    const ParamSet& ps = m.params;
    const std::size_t T = noisy.num_frames(), L = m.latent_dim();
    const ConformerConfig cfg = m.cfg.stack(m.cfg.ar_layers, true);
    ConformerCache cache;
    if (kv_cache) {
        Graph g(false);
        conformer_forward(g, ps, "ar.", cfg, lin(g, ps, "noisy_proj", g.constant(noisy.values)), &cache);
    }
    DecodeStats st;
    LatentSeq out{Tensor(T, L)};
    Tensor fed(T, L);  // feedback frames, row t is fed at step t + 1
    for (std::size_t t = 0; t < T; ++t) {
        Graph g(false);
        Tensor mt;
        if (kv_cache) {
            Var in = t == 0 ? g.constant(ps.at("start").value)
                            : lin(g, ps, "clean_proj", g.constant(fed.rows_slice(t - 1, 1)));
            mt = g.value(lin(g, ps, "out", conformer_forward(g, ps, "ar.", cfg, in, &cache)));
        } else {
            Var seq = g.concat_rows(lin(g, ps, "noisy_proj", g.constant(noisy.values)), g.constant(ps.at("start").value));
            if (t > 0) seq = g.concat_rows(seq, lin(g, ps, "clean_proj", g.constant(fed.rows_slice(0, t))));
            Var h = conformer_forward(g, ps, "ar.", cfg, seq);
            mt = g.value(lin(g, ps, "out", g.slice_rows(h, T + t, 1)));
        }
        std::copy_n(mt.data(), L, out.values.data() + t * L);
        ++st.temporal_steps;
        if (t + 1 < T) {
            Tensor fb = mt;
            if (quantize_feedback) {
                fb = rvq_quantize(LatentSeq{mt}, codebooks).reconstruction.values;
                ++st.feedback_quantizations;
            }
            std::copy_n(fb.data(), L, fed.data() + t * L);
        }
    }
    if (stats) *stats = st;
    return out;
}

const char* route_name(Route r) noexcept {
    switch (r) {
        case Route::none: return "none";
        case Route::d_ar_decode: return "d-ar greedy decode";
        case Route::d_nar_argmax: return "d-nar argmax";
        case Route::d_nar_star_argmax: return "d-nar-star argmax";
        case Route::c_ar_decode: return "c-ar decode with quantize feedback";
        case Route::c_nar_mean: return "c-nar mean";
        case Route::c_ft_mean: return "c-ft mean";
        case Route::d_ft_argmax: return "d-ft soft-label argmax";
        case Route::c_nar_ft_mean: return "c-nar-ft mean";
    }
    return "?";
}

Waveform enhance(const Waveform& noisy, const SeModel& m, const Codec& codec, EnhanceTrace* trace,
                 const EnhanceOptions& opts) {
    require(noisy.sample_rate == m.codec_cfg.sample_rate, ErrorKind::data,
            "input rate " + std::to_string(noisy.sample_rate) + " Hz differs from model rate " +
                std::to_string(m.codec_cfg.sample_rate) + " Hz");
    const CodebookSet& cb = codec.codebooks();
    EnhanceTrace tr;
    auto tokenize = [&](const LatentSeq& z) {
        kernels::MacPause pause;
        return rvq_quantize(z, cb).tokens;
    };
    bool continuous = false;
    switch (m.variant) {
        case Variant::d_ar:
            tr.route = Route::d_ar_decode;
            tr.tokens = d_ar_decode(m, tokenize(encode(noisy, codec)), &tr.stats, opts.kv_cache);
            break;
        case Variant::d_nar:
            tr.route = Route::d_nar_argmax;
            tr.tokens = d_nar_forward(m, tokenize(encode(noisy, codec))).argmax();
            break;
        case Variant::d_nar_star:
            tr.route = Route::d_nar_star_argmax;
            tr.tokens = d_nar_forward(m, encode(noisy, codec)).argmax();
            break;
        case Variant::c_ar:
            tr.route = Route::c_ar_decode;
            tr.estimate = c_ar_decode(m, encode(noisy, codec), cb, opts.quantize_feedback, &tr.stats, opts.kv_cache);
            continuous = true;
            break;
        case Variant::c_nar:
            tr.route = Route::c_nar_mean;
            tr.estimate = LatentSeq{c_nar_forward(m, encode(noisy, codec))};
            continuous = true;
            break;
        case Variant::c_ft:
            tr.route = Route::c_ft_mean;
            tr.estimate = LatentSeq{ft_forward(m, noisy, cb).mean};
            continuous = true;
            break;
        case Variant::d_ft:
            tr.route = Route::d_ft_argmax;
            tr.tokens = ft_forward(m, noisy, cb).logits.argmax();
            break;
        case Variant::c_nar_ft:
            tr.route = Route::c_nar_ft_mean;
            tr.estimate = LatentSeq{ft_forward(m, noisy, cb).mean};
            continuous = true;
            break;
    }
    if (continuous) tr.tokens = tokenize(tr.estimate);
    Waveform out;
    {
        kernels::MacPause pause;
        out = decode(rvq_dequantize(tr.tokens, cb), codec);
    }
    if (trace) *trace = std::move(tr);
    return out;
}

Checkpoint model_checkpoint(const SeModel& m, const Codec& codec, const RunConfig& run) {
    require(run.model.hidden_dim == m.cfg.hidden_dim && run.codec.latent_dim == m.codec_cfg.latent_dim,
            ErrorKind::config, "run configuration does not describe this model");
    Checkpoint ck;
    ck.config = nlohmann::json{{"kind", "se_model"},
                               {"variant", std::string(variant_name(m.variant))},
                               {"run", nlohmann::json::parse(run.to_json())}}
                    .dump(2);
    ck.add_params(m.params, "model.");
    codec.save(ck, "codec.");
    return ck;
}

void save_model(const std::filesystem::path& path, const SeModel& m, const Codec& codec, const RunConfig& run) {
    save_checkpoint(path, model_checkpoint(m, codec, run));
}

LoadedModel model_from_checkpoint(const Checkpoint& ck) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(ck.config);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::data, std::string("model header is not JSON: ") + e.what());
    }
    require(meta.value("kind", "") == "se_model", ErrorKind::data, "checkpoint does not hold an enhancement model");
    const auto v = parse_variant(meta.at("variant").get<std::string>());
    require(v.has_value(), ErrorKind::data, "unknown variant in checkpoint header");
    RunConfig run = parse_config(meta.at("run").dump());
    Codec codec = Codec::load(ck, run.codec, "codec.");
    SeModel m = make_model(*v, run.model, codec, run.seed);
    ck.load_params(m.params, "model.");
    return LoadedModel{std::move(m), std::move(codec), run};
}

LoadedModel load_model(const std::filesystem::path& path) {
    return model_from_checkpoint(load_checkpoint(path));
}

}  // namespace lse
