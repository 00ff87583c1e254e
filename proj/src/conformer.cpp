#include "lse/conformer.hpp"

#include <cmath>

#include "lse/errors.hpp"
#include "lse/kernels.hpp"

namespace lse {

std::size_t CausalMask::count() const {
    std::size_t c = 0;
    for (auto a : allowed) c += a;
    return c;
}

CausalMask causal_mask(std::size_t T) {
    require(T >= 1, ErrorKind::shape, "causal_mask: T must be positive");
    CausalMask m{T, std::vector<std::uint8_t>(T * T, 0)};
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t s = 0; s <= t; ++s) m.allowed[t * T + s] = 1;
    return m;
}

namespace {

void add_linear(ParamSet& ps, const std::string& name, std::size_t out, std::size_t in, Rng& rng) {
    ps.add(name + ".w", fan_in_init(out, in, in, rng));
    ps.add(name + ".b", Tensor(1, out), false);
}

void add_norm(ParamSet& ps, const std::string& name, std::size_t h) {
    ps.add(name + ".g", Tensor(1, h, 1.0), false);
    ps.add(name + ".b", Tensor(1, h), false);
}

Var lin(Graph& g, const ParamSet& ps, const std::string& name, Var x) {
    return g.linear(x, g.param(ps.at(name + ".w")), g.param(ps.at(name + ".b")));
}

Var norm(Graph& g, const ParamSet& ps, const std::string& name, Var x) {
    return g.layer_norm(x, g.param(ps.at(name + ".g")), g.param(ps.at(name + ".b")));
}

Var feed_forward(Graph& g, const ParamSet& ps, const std::string& name, Var x) {
    Var h = norm(g, ps, name + ".ln", x);
    h = g.silu(lin(g, ps, name + ".up", h));
    return lin(g, ps, name + ".down", h);
}

Tensor positions_for(std::size_t rows, std::size_t dim, std::size_t offset, std::size_t group) {
    if (group == 0) return sinusoidal_positions(rows, dim, offset);
    const Tensor base = sinusoidal_positions(group, dim, 0);
    Tensor pe(rows, dim);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < dim; ++c) pe(r, c) = base(r % group, c);
    return pe;
}

// Each group is zero-padded on its own so the convolution never reads
// across a group boundary.
Var grouped_conv(Graph& g, const ParamSet& ps, const std::string& p, Var c, std::size_t rows,
                 std::size_t group, std::size_t before, std::size_t K) {
    const std::size_t span = group + K - 1, groups = rows / group;
    std::vector<std::size_t> in_idx, out_idx;
    for (std::size_t i = 0; i < groups; ++i) {
        for (std::size_t r = 0; r < span; ++r)
            in_idx.push_back(r >= before && r < before + group ? i * group + r - before : rows);
        for (std::size_t r = 0; r < group; ++r) out_idx.push_back(i * span + r);
    }
    Var padded = g.gather_rows(g.pad_rows(c, 0, 1), in_idx);
    Var y = g.depthwise_conv(padded, g.param(ps.at(p + "conv.dw.w")), g.param(ps.at(p + "conv.dw.b")));
    return g.gather_rows(y, out_idx);
}

}  // namespace

void add_conformer_params(ParamSet& ps, const std::string& prefix, const ConformerConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t H = cfg.hidden_dim, F = cfg.ff_expansion * H;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const std::string p = prefix + "layer" + std::to_string(l) + ".";
        if (cfg.macaron) {
            add_norm(ps, p + "ff1.ln", H);
            add_linear(ps, p + "ff1.up", F, H, rng);
            add_linear(ps, p + "ff1.down", H, F, rng);
        }
        add_norm(ps, p + "att.ln", H);
        add_linear(ps, p + "att.q", H, H, rng);
        add_linear(ps, p + "att.k", H, H, rng);
        add_linear(ps, p + "att.v", H, H, rng);
        add_linear(ps, p + "att.o", H, H, rng);
        if (cfg.conv_module) {
            add_norm(ps, p + "conv.ln", H);
            add_linear(ps, p + "conv.pw1", 2 * H, H, rng);
            ps.add(p + "conv.dw.w", fan_in_init(cfg.conv_kernel_size, H, cfg.conv_kernel_size, rng));
            ps.add(p + "conv.dw.b", Tensor(1, H), false);
            add_norm(ps, p + "conv.norm", H);
            add_linear(ps, p + "conv.pw2", H, H, rng);
        }
        add_norm(ps, p + "ff2.ln", H);
        add_linear(ps, p + "ff2.up", F, H, rng);
        add_linear(ps, p + "ff2.down", H, F, rng);
        add_norm(ps, p + "out", H);
    }
}

void add_embedding_params(ParamSet& ps, const std::string& prefix, std::size_t stages,
                          std::size_t codebook_size, std::size_t hidden, Rng& rng) {
    for (std::size_t n = 0; n < stages; ++n)
        ps.add(prefix + std::to_string(n), normal_init(codebook_size, hidden, 1.0 / std::sqrt(static_cast<double>(stages)), rng));
}

Var embed_tokens(Graph& g, const ParamSet& ps, const std::string& prefix, const TokenGrid& tokens) {
    require(tokens.stages() >= 1 && tokens.frames() >= 1, ErrorKind::shape, "embed_tokens: empty grid");
    Var sum;
    for (std::size_t n = 0; n < tokens.stages(); ++n) {
        const Param* table = ps.find(prefix + std::to_string(n));
        require(table != nullptr, ErrorKind::shape,
                "embed_tokens: no embedding table for stage " + std::to_string(n));
        Var e = g.embedding(g.param(*table), tokens.stage_row(n));
        sum = sum.valid() ? g.add(sum, e) : e;
    }
    return sum;
}

Tensor embed_tokens(const TokenGrid& tokens, const std::vector<Tensor>& tables) {
    require(tables.size() == tokens.stages(), ErrorKind::shape,
            "embed_tokens: " + std::to_string(tables.size()) + " tables for " +
                std::to_string(tokens.stages()) + " stages");
    require(!tables.empty(), ErrorKind::shape, "embed_tokens: no tables");
    const std::size_t H = tables[0].cols();
    Tensor out(tokens.frames(), H);
    for (std::size_t n = 0; n < tokens.stages(); ++n)
        for (std::size_t t = 0; t < tokens.frames(); ++t) {
            const int k = tokens.at(n, t);
            require(k >= 0 && static_cast<std::size_t>(k) < tables[n].rows(), ErrorKind::index,
                    "embed_tokens: token " + std::to_string(k) + " out of range at stage " +
                        std::to_string(n) + ", frame " + std::to_string(t));
            for (std::size_t c = 0; c < H; ++c) out(t, c) += tables[n](static_cast<std::size_t>(k), c);
        }
    return out;
}

Var project_latent(Graph& g, Var latent, Var weight, Var bias) {
    return g.linear(latent, weight, bias);
}

Tensor project_latent(const LatentSeq& latent, const Tensor& weight, const Tensor& bias) {
    Graph g(false);
    return g.value(g.linear(g.constant(latent.values), g.constant(weight), g.constant(bias)));
}

Var conformer_forward(Graph& g, const ParamSet& ps, const std::string& prefix,
                      const ConformerConfig& cfg, Var x, ConformerCache* cache, std::size_t group) {
    const std::size_t rows = g.value(x).rows(), H = cfg.hidden_dim;
    require(g.value(x).cols() == H, ErrorKind::shape,
            "conformer input width " + std::to_string(g.value(x).cols()) + " != " + std::to_string(H));
    require(cache == nullptr || (cfg.causal && group == 0), ErrorKind::usage,
            "incremental decoding needs an ungrouped causal stack");
    const std::size_t offset = cache ? cache->length : 0;
    require(offset + (group ? group : rows) <= cfg.max_sequence_length, ErrorKind::length,
            "sequence length " + std::to_string(offset + rows) + " exceeds max_sequence_length " +
                std::to_string(cfg.max_sequence_length));
    if (cache && cache->layers.empty()) cache->layers.resize(cfg.num_layers);

    Var h = g.add(x, g.constant(positions_for(rows, H, offset, group)));
    const std::size_t K = cfg.conv_kernel_size;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const std::string p = prefix + "layer" + std::to_string(l) + ".";
        if (cfg.macaron) h = g.add(h, g.scale(feed_forward(g, ps, p + "ff1", h), 0.5));

        // Self-attention.
        Var a = norm(g, ps, p + "att.ln", h);
        Var q = lin(g, ps, p + "att.q", a);
        Var k = lin(g, ps, p + "att.k", a);
        Var v = lin(g, ps, p + "att.v", a);
        AttentionSpec spec{cfg.num_heads, cfg.causal, offset, group};
        if (cache) {
            auto& L = cache->layers[l];
            if (L.keys.rows() > 0) {
                k = g.concat_rows(g.constant(L.keys), k);
                v = g.concat_rows(g.constant(L.values), v);
            }
            L.keys = g.value(k);
            L.values = g.value(v);
        }
        h = g.add(h, lin(g, ps, p + "att.o", g.attention(q, k, v, spec)));

        if (cfg.conv_module) {
            Var c = norm(g, ps, p + "conv.ln", h);
            c = g.glu(lin(g, ps, p + "conv.pw1", c));
            if (cache) {
                auto& L = cache->layers[l];
                if (L.conv_tail.rows() == 0) L.conv_tail = Tensor(K - 1, H);
                Var ctx = g.concat_rows(g.constant(L.conv_tail), c);
                const Tensor& cv = g.value(ctx);
                L.conv_tail = cv.rows_slice(cv.rows() - (K - 1), K - 1);
                c = ctx;
            } else if (group && group < rows) {
                c = grouped_conv(g, ps, p, c, rows, group, cfg.causal ? K - 1 : (K - 1) / 2, K);
            } else if (cfg.causal) {
                c = g.pad_rows(c, K - 1, 0);
            } else {
                c = g.pad_rows(c, (K - 1) / 2, (K - 1) / 2);
            }
            if (!(group && group < rows))
                c = g.depthwise_conv(c, g.param(ps.at(p + "conv.dw.w")), g.param(ps.at(p + "conv.dw.b")));
            c = g.silu(norm(g, ps, p + "conv.norm", c));
            h = g.add(h, lin(g, ps, p + "conv.pw2", c));
        }

        Var f = feed_forward(g, ps, p + "ff2", h);
        h = g.add(h, cfg.macaron ? g.scale(f, 0.5) : f);
        h = norm(g, ps, p + "out", h);
        require(g.value(h).all_finite(), ErrorKind::numerical,
                "non-finite activations after " + p.substr(0, p.size() - 1));
    }
    if (cache) cache->length += rows;
    return h;
}

}  // namespace lse
