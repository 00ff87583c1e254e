#include "lse/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "lse/errors.hpp"
#include "lse/kernels.hpp"

namespace lse {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_same(const Tensor& a, const Tensor& b, const char* op) {
    require(a.same_shape(b), ErrorKind::shape,
            std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str());
}

struct DftBasis {
    Tensor window;  // 1 x fft
    Tensor cos_t;   // fft x bins
    Tensor sin_t;   // fft x bins
};

const DftBasis& dft_basis(std::size_t fft) {
    static std::mutex mu;
    static std::map<std::size_t, DftBasis> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(fft);
    if (it != cache.end()) return it->second;
    const std::size_t bins = fft / 2 + 1;
    DftBasis b;
    b.window = Tensor(1, fft);
    b.cos_t = Tensor(fft, bins);
    b.sin_t = Tensor(fft, bins);
    for (std::size_t n = 0; n < fft; ++n) {
        b.window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                           static_cast<double>(fft));
        for (std::size_t k = 0; k < bins; ++k) {
            const double ang = 2.0 * std::numbers::pi * static_cast<double>((n * k) % fft) /
                               static_cast<double>(fft);
            b.cos_t(n, k) = std::cos(ang);
            b.sin_t(n, k) = -std::sin(ang);
        }
    }
    return cache.emplace(fft, std::move(b)).first->second;
}

}  // namespace

Var Graph::push(Tensor value, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = record_ && needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

const Graph::Node& Graph::node(Var v) const {
    require(v.id >= 0 && static_cast<std::size_t>(v.id) < nodes_.size(), ErrorKind::usage,
            "variable does not belong to this graph");
    return nodes_[static_cast<std::size_t>(v.id)];
}

Graph::Node& Graph::node(Var v) {
    require(v.id >= 0 && static_cast<std::size_t>(v.id) < nodes_.size(), ErrorKind::usage,
            "variable does not belong to this graph");
    return nodes_[static_cast<std::size_t>(v.id)];
}

Tensor& Graph::grad_ref(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.empty()) {
        const Tensor& x = n.ref ? *n.ref : n.value;
        n.grad = Tensor(x.rows(), x.cols());
    }
    return n.grad;
}

Var Graph::constant(Tensor t) { return push(std::move(t), false); }

Var Graph::input(Tensor t) { return push(std::move(t), true); }

Var Graph::param(const Param& p) {
    Node n;
    n.ref = &p.value;
    n.param = &p;
    n.needs_grad = record_;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Graph::value(Var v) const {
    const Node& n = node(v);
    return n.ref ? *n.ref : n.value;
}

Tensor Graph::grad(Var v) const {
    const Node& n = node(v);
    if (!n.grad.empty()) return n.grad;
    const Tensor& x = n.ref ? *n.ref : n.value;
    return Tensor(x.rows(), x.cols());
}

void Graph::backward(Var loss) {
    const Tensor& l = value(loss);
    require(l.size() == 1, ErrorKind::usage, "backward(loss) needs a scalar, got " + l.shape_str());
    backward(loss, Tensor(1, 1, 1.0));
}

void Graph::backward(Var out, const Tensor& upstream) {
    require(record_, ErrorKind::usage, "backward on a graph built without recording");
    require(!nodes_.empty(), ErrorKind::usage, "backward without a recorded forward pass");
    require(!backward_done_, ErrorKind::usage, "backward already ran on this graph");
    Node& o = node(out);
    check_same(o.ref ? *o.ref : o.value, upstream, "backward seed");
    backward_done_ = true;
    if (!o.needs_grad) return;
    grad_ref(out) += upstream;
    for (int i = out.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.backward && !n.grad.empty()) n.backward();
    }
}

void Graph::collect_grads(Grads& into, double scale) const {
    for (const Node& n : nodes_) {
        if (!n.param || n.grad.empty()) continue;
        auto it = into.find(n.param);
        if (it == into.end()) {
            Tensor g = n.grad;
            if (scale != 1.0) g *= scale;
            into.emplace(n.param, std::move(g));
        } else {
            Tensor& dst = it->second;
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * n.grad[i];
        }
    }
}

// ---------------------------------------------------------------- elementwise

Var Graph::add(Var a, Var b) {
    check_same(value(a), value(b), "add");
    Tensor out = value(a) + value(b);
    Var o = push(std::move(out), needs(a) || needs(b));
    on_backward(o, [this, a, b, o] {
        const Tensor& g = nodes_[o.id].grad;
        if (needs(a)) grad_ref(a) += g;
        if (needs(b)) grad_ref(b) += g;
    });
    return o;
}

Var Graph::sub(Var a, Var b) {
    check_same(value(a), value(b), "sub");
    Tensor out = value(a) - value(b);
    Var o = push(std::move(out), needs(a) || needs(b));
    on_backward(o, [this, a, b, o] {
        const Tensor& g = nodes_[o.id].grad;
        if (needs(a)) grad_ref(a) += g;
        if (needs(b)) grad_ref(b) -= g;
    });
    return o;
}

Var Graph::mul(Var a, Var b) {
    check_same(value(a), value(b), "mul");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    Var o = push(std::move(out), needs(a) || needs(b));
    on_backward(o, [this, a, b, o] {
        const Tensor& g = nodes_[o.id].grad;
        if (needs(a)) {
            Tensor& ga = grad_ref(a);
            const Tensor& bv2 = val(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
        }
        if (needs(b)) {
            Tensor& gb = grad_ref(b);
            const Tensor& av = val(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
    return o;
}

Var Graph::scale(Var a, double s) {
    Tensor out = value(a) * s;
    Var o = push(std::move(out), needs(a));
    on_backward(o, [this, a, o, s] {
        const Tensor& g = nodes_[o.id].grad;
        Tensor& ga = grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
    return o;
}

Var Graph::add_row(Var a, Var row) {
    const Tensor& av = value(a);
    const Tensor& rv = value(row);
    require(rv.rows() == 1 && rv.cols() == av.cols(), ErrorKind::shape,
            "add_row: " + av.shape_str() + " + " + rv.shape_str());
    Tensor out = av;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += rv[c];
    Var o = push(std::move(out), needs(a) || needs(row));
    on_backward(o, [this, a, row, o] {
        const Tensor& g = nodes_[o.id].grad;
        if (needs(a)) grad_ref(a) += g;
        if (needs(row)) {
            Tensor& gr = grad_ref(row);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g(r, c);
        }
    });
    return o;
}

Var Graph::square(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
    Var o = push(std::move(out), needs(a));
    on_backward(o, [this, a, o] {
        const Tensor& g = nodes_[o.id].grad;
        const Tensor& av = val(a.id);
        Tensor& ga = grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * av[i] * g[i];
    });
    return o;
}

Var Graph::abs(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(out[i]);
    Var o = push(std::move(out), needs(a));
    on_backward(o, [this, a, o] {
        const Tensor& g = nodes_[o.id].grad;
        const Tensor& av = val(a.id);
        Tensor& ga = grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += (av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0)) * g[i];
    });
    return o;
}

Var Graph::tanh(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    Var o = push(std::move(out), needs(a));
    on_backward(o, [this, a, o] {
        const Tensor& g = nodes_[o.id].grad;
        const Tensor& y = nodes_[o.id].value;
        Tensor& ga = grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += (1.0 - y[i] * y[i]) * g[i];
    });
    return o;
}

Var Graph::silu(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * sigmoid(out[i]);
    Var o = push(std::move(out), needs(a));
    on_backward(o, [this, a, o] {
        const Tensor& g = nodes_[o.id].grad;
        const Tensor& x = val(a.id);
        Tensor& ga = grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = sigmoid(x[i]);
            ga[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
        }
    });
    return o;
}

Var Graph::glu(Var a) {
    const Tensor& x = value(a);
    require(x.cols() % 2 == 0, ErrorKind::shape, "glu needs an even width, got " + x.shape_str());
    const std::size_t h = x.cols() / 2;
    Tensor out(x.rows(), h);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < h; ++c) out(r, c) = x(r, c) * sigmoid(x(r, c + h));
    Var o = push(std::move(out), needs(a));
    on_backward(o, [this, a, o, h] {
        const Tensor& g = nodes_[o.id].grad;
        const Tensor& xv = val(a.id);
        Tensor& ga = grad_ref(a);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < h; ++c) {
                const double s = sigmoid(xv(r, c + h));
                ga(r, c) += g(r, c) * s;
                ga(r, c + h) += g(r, c) * xv(r, c) * s * (1.0 - s);
            }
    });
    return o;
}

Var Graph::concat_rows(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require(av.cols() == bv.cols(), ErrorKind::shape,
            "concat_rows: " + av.shape_str() + " / " + bv.shape_str());
    Tensor out(av.rows() + bv.rows(), av.cols());
    std::copy(av.storage().begin(), av.storage().end(), out.storage().begin());
    std::copy(bv.storage().begin(), bv.storage().end(),
              out.storage().begin() + static_cast<std::ptrdiff_t>(av.size()));
    const std::size_t split = av.size();
    Var o = push(std::move(out), needs(a) || needs(b));
    on_backward(o, [this, a, b, o, split] {
        const Tensor& g = nodes_[o.id].grad;
        if (needs(a)) {
            Tensor& ga = grad_ref(a);
            for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
        }
        if (needs(b)) {
            Tensor& gb = grad_ref(b);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[split + i];
        }
    });
    return o;
}

Var Graph::concat_cols(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require(av.rows() == bv.rows(), ErrorKind::shape,
            "concat_cols: " + av.shape_str() + " | " + bv.shape_str());
    const std::size_t ca = av.cols(), cb = bv.cols();
    Tensor out(av.rows(), ca + cb);
    for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < ca; ++c) out(r, c) = av(r, c);
        for (std::size_t c = 0; c < cb; ++c) out(r, ca + c) = bv(r, c);
    }
    Var o = push(std::move(out), needs(a) || needs(b));
    on_backward(o, [this, a, b, o, ca, cb] {
        const Tensor& g = nodes_[o.id].grad;
        if (needs(a)) {
            Tensor& ga = grad_ref(a);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < ca; ++c) ga(r, c) += g(r, c);
        }
        if (needs(b)) {
            Tensor& gb = grad_ref(b);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < cb; ++c) gb(r, c) += g(r, ca + c);
        }
    });
    return o;
}

Var Graph::slice_rows(Var a, std::size_t begin, std::size_t count) {
    Tensor out = value(a).rows_slice(begin, count);
    Var o = push(std::move(out), needs(a));
    on_backward(o, [this, a, o, begin] {
        const Tensor& g = nodes_[o.id].grad;
        Tensor& ga = grad_ref(a);
        const std::size_t off = begin * ga.cols();
        for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
    });
    return o;
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t count) {
    const Tensor& x = value(a);
    require(begin + count <= x.cols(), ErrorKind::shape, "slice_cols out of range");
    Tensor out(x.rows(), count);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, begin + c);
    Var o = push(std::move(out), needs(a));
    on_backward(o, [this, a, o, begin] {
        const Tensor& g = nodes_[o.id].grad;
        Tensor& ga = grad_ref(a);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) += g(r, c);
    });
    return o;
}

Var Graph::pad_rows(Var a, std::size_t before, std::size_t after) {
    const Tensor& x = value(a);
    Tensor out(x.rows() + before + after, x.cols());
    std::copy(x.storage().begin(), x.storage().end(),
              out.storage().begin() + static_cast<std::ptrdiff_t>(before * x.cols()));
    Var o = push(std::move(out), needs(a));
    on_backward(o, [this, a, o, before] {
        const Tensor& g = nodes_[o.id].grad;
        Tensor& ga = grad_ref(a);
        const std::size_t off = before * ga.cols();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[off + i];
    });
    return o;
}

Var Graph::gather_rows(Var a, std::span<const std::size_t> index) {
    const Tensor& x = value(a);
    std::vector<std::size_t> idx(index.begin(), index.end());
    Tensor out(idx.size(), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] < x.rows(), ErrorKind::index, "gather_rows index out of range");
        std::copy_n(x.data() + idx[i] * x.cols(), x.cols(), out.data() + i * x.cols());
    }
    Var o = push(std::move(out), needs(a));
    on_backward(o, [this, a, o, idx = std::move(idx)] {
        const Tensor& g = nodes_[o.id].grad;
        Tensor& ga = grad_ref(a);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t c = 0; c < g.cols(); ++c) ga(idx[i], c) += g(i, c);
    });
    return o;
}

Var Graph::detach(Var a) { return constant(value(a)); }

Var Graph::sum(Var a) {
    Var o = push(Tensor(1, 1, value(a).sum()), needs(a));
    on_backward(o, [this, a, o] {
        const double g = nodes_[o.id].grad[0];
        Tensor& ga = grad_ref(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
    return o;
}

Var Graph::mean(Var a) {
    const double n = static_cast<double>(value(a).size());
    require(n > 0, ErrorKind::shape, "mean of an empty tensor");
    return scale(sum(a), 1.0 / n);
}

// --------------------------------------------------------------------- layers

Var Graph::linear(Var x, Var weight, Var bias) {
    const Tensor& xv = value(x);
    const Tensor& w = value(weight);
    require(xv.cols() == w.cols(), ErrorKind::shape,
            "linear: input " + xv.shape_str() + " vs weight " + w.shape_str());
    const std::size_t rows = xv.rows(), in = w.cols(), outd = w.rows();
    Tensor out(rows, outd);
    if (bias.valid()) {
        const Tensor& b = value(bias);
        require(b.rows() == 1 && b.cols() == outd, ErrorKind::shape,
                "linear: bias " + b.shape_str() + " for width " + std::to_string(outd));
        for (std::size_t r = 0; r < rows; ++r) std::copy_n(b.data(), outd, out.data() + r * outd);
    }
    kernels::gemm_nt(rows, outd, in, xv.data(), in, w.data(), in, out.data(), outd);
    const bool nb = bias.valid() && needs(bias);
    Var o = push(std::move(out), needs(x) || needs(weight) || nb);
    on_backward(o, [this, x, weight, bias, o, rows, in, outd, nb] {
        const Tensor& g = nodes_[o.id].grad;
        if (needs(x))
            kernels::gemm_nn(rows, in, outd, g.data(), outd, val(weight.id).data(), in,
                             grad_ref(x).data(), in);
        if (needs(weight))
            kernels::gemm_tn(outd, in, rows, g.data(), outd, val(x.id).data(), in,
                             grad_ref(weight).data(), in);
        if (nb) {
            Tensor& gb = grad_ref(bias);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < outd; ++c) gb[c] += g(r, c);
        }
    });
    return o;
}

Var Graph::layer_norm(Var x, Var gain, Var bias, double eps) {
    const Tensor& xv = value(x);
    const Tensor& gv = value(gain);
    const Tensor& bv = value(bias);
    const std::size_t rows = xv.rows(), n = xv.cols();
    require(gv.size() == n && bv.size() == n, ErrorKind::shape, "layer_norm parameter width");
    Tensor out(rows, n);
    Tensor xhat(rows, n);
    std::vector<double> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (std::size_t c = 0; c < n; ++c) mu += xv(r, c);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t c = 0; c < n; ++c) var += (xv(r, c) - mu) * (xv(r, c) - mu);
        var /= static_cast<double>(n);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) {
            xhat(r, c) = (xv(r, c) - mu) * rstd[r];
            out(r, c) = xhat(r, c) * gv[c] + bv[c];
        }
    }
    Var o = push(std::move(out), needs(x) || needs(gain) || needs(bias));
    on_backward(o, [this, x, gain, bias, o, rows, n, xhat = std::move(xhat),
                    rstd = std::move(rstd)] {
        const Tensor& g = nodes_[o.id].grad;
        const Tensor& gv2 = val(gain.id);
        if (needs(gain) || needs(bias)) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < n; ++c) {
                    if (needs(gain)) grad_ref(gain)[c] += g(r, c) * xhat(r, c);
                    if (needs(bias)) grad_ref(bias)[c] += g(r, c);
                }
        }
        if (needs(x)) {
            Tensor& gx = grad_ref(x);
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t r = 0; r < rows; ++r) {
                double s1 = 0.0, s2 = 0.0;
                for (std::size_t c = 0; c < n; ++c) {
                    const double dxh = g(r, c) * gv2[c];
                    s1 += dxh;
                    s2 += dxh * xhat(r, c);
                }
                for (std::size_t c = 0; c < n; ++c) {
                    const double dxh = g(r, c) * gv2[c];
                    gx(r, c) += rstd[r] * (dxh - inv_n * s1 - xhat(r, c) * inv_n * s2);
                }
            }
        }
    });
    return o;
}

Var Graph::attention(Var q, Var k, Var v, const AttentionSpec& spec) {
    const Tensor& qv = value(q);
    const Tensor& kv = value(k);
    const Tensor& vv = value(v);
    const std::size_t dim = qv.cols();
    require(kv.cols() == dim && vv.cols() == dim && kv.rows() == vv.rows(), ErrorKind::shape,
            "attention: q " + qv.shape_str() + " k " + kv.shape_str() + " v " + vv.shape_str());
    require(spec.heads > 0 && dim % spec.heads == 0, ErrorKind::shape,
            "attention: width " + std::to_string(dim) + " not divisible by heads");
    const std::size_t heads = spec.heads, dh = dim / heads;
    std::size_t groups = 1, tq = qv.rows(), tk = kv.rows();
    if (spec.group > 0) {
        require(qv.rows() == kv.rows() && qv.rows() % spec.group == 0, ErrorKind::shape,
                "grouped attention needs aligned rows divisible by the group size");
        groups = qv.rows() / spec.group;
        tq = tk = spec.group;
    }
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t qoff = spec.group > 0 ? 0 : spec.query_offset;
    // probs[g][h] is tq x tk
    std::vector<Tensor> probs(groups * heads);
    Tensor out(qv.rows(), dim);
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t q0 = gi * tq, k0 = gi * tk;
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor s(tq, tk);
            kernels::gemm_nt(tq, tk, dh, qv.data() + q0 * dim + h * dh, dim,
                             kv.data() + k0 * dim + h * dh, dim, s.data(), tk);
            for (std::size_t i = 0; i < tq; ++i) {
                const std::size_t limit = spec.causal ? std::min(tk, qoff + i + 1) : tk;
                double mx = -1e300;
                for (std::size_t j = 0; j < limit; ++j) {
                    s(i, j) *= sc;
                    mx = std::max(mx, s(i, j));
                }
                double z = 0.0;
                for (std::size_t j = 0; j < limit; ++j) {
                    s(i, j) = std::exp(s(i, j) - mx);
                    z += s(i, j);
                }
                for (std::size_t j = 0; j < limit; ++j) s(i, j) /= z;
                for (std::size_t j = limit; j < tk; ++j) s(i, j) = 0.0;
            }
            kernels::gemm_nn(tq, dh, tk, s.data(), tk, vv.data() + k0 * dim + h * dh, dim,
                             out.data() + q0 * dim + h * dh, dim);
            probs[gi * heads + h] = std::move(s);
        }
    }
    Var o = push(std::move(out), needs(q) || needs(k) || needs(v));
    on_backward(o, [this, q, k, v, o, groups, heads, dh, dim, tq, tk, sc,
                    probs = std::move(probs)] {
        const Tensor& g = nodes_[o.id].grad;
        const Tensor& qv2 = val(q.id);
        const Tensor& kv2 = val(k.id);
        const Tensor& vv2 = val(v.id);
        Tensor* gq = needs(q) ? &grad_ref(q) : nullptr;
        Tensor* gk = needs(k) ? &grad_ref(k) : nullptr;
        Tensor* gv = needs(v) ? &grad_ref(v) : nullptr;
        for (std::size_t gi = 0; gi < groups; ++gi) {
            const std::size_t q0 = gi * tq, k0 = gi * tk;
            for (std::size_t h = 0; h < heads; ++h) {
                const Tensor& p = probs[gi * heads + h];
                const double* go = g.data() + q0 * dim + h * dh;
                if (gv)
                    kernels::gemm_tn(tk, dh, tq, p.data(), tk, go, dim,
                                     gv->data() + k0 * dim + h * dh, dim);
                if (!gq && !gk) continue;
                Tensor dp(tq, tk);
                kernels::gemm_nt(tq, tk, dh, go, dim, vv2.data() + k0 * dim + h * dh, dim,
                                 dp.data(), tk);
                for (std::size_t i = 0; i < tq; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < tk; ++j) dot += dp(i, j) * p(i, j);
                    for (std::size_t j = 0; j < tk; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * sc;
                }
                if (gq)
                    kernels::gemm_nn(tq, dh, tk, dp.data(), tk, kv2.data() + k0 * dim + h * dh, dim,
                                     gq->data() + q0 * dim + h * dh, dim);
                if (gk)
                    kernels::gemm_tn(tk, dh, tq, dp.data(), tk, qv2.data() + q0 * dim + h * dh, dim,
                                     gk->data() + k0 * dim + h * dh, dim);
            }
        }
    });
    return o;
}

Var Graph::depthwise_conv(Var x, Var weight, Var bias) {
    const Tensor& xv = value(x);
    const Tensor& w = value(weight);
    const Tensor& b = value(bias);
    const std::size_t kern = w.rows(), ch = w.cols();
    require(xv.cols() == ch && b.size() == ch, ErrorKind::shape,
            "depthwise_conv: input " + xv.shape_str() + " weight " + w.shape_str());
    require(xv.rows() >= kern, ErrorKind::shape, "depthwise_conv: input shorter than kernel");
    const std::size_t rows = xv.rows() - kern + 1;
    Tensor out(rows, ch);
    kernels::add_macs(static_cast<std::uint64_t>(rows) * ch * kern);
    for (std::size_t t = 0; t < rows; ++t) {
        double* o = out.data() + t * ch;
        std::copy_n(b.data(), ch, o);
        for (std::size_t j = 0; j < kern; ++j) {
            const double* xr = xv.data() + (t + j) * ch;
            const double* wr = w.data() + j * ch;
            for (std::size_t c = 0; c < ch; ++c) o[c] += wr[c] * xr[c];
        }
    }
    Var o = push(std::move(out), needs(x) || needs(weight) || needs(bias));
    on_backward(o, [this, x, weight, bias, o, rows, kern, ch] {
        const Tensor& g = nodes_[o.id].grad;
        const Tensor& xv2 = val(x.id);
        const Tensor& w2 = val(weight.id);
        Tensor* gx = needs(x) ? &grad_ref(x) : nullptr;
        Tensor* gw = needs(weight) ? &grad_ref(weight) : nullptr;
        Tensor* gb = needs(bias) ? &grad_ref(bias) : nullptr;
        for (std::size_t t = 0; t < rows; ++t) {
            const double* gr = g.data() + t * ch;
            if (gb)
                for (std::size_t c = 0; c < ch; ++c) (*gb)[c] += gr[c];
            for (std::size_t j = 0; j < kern; ++j) {
                if (gx) {
                    double* gxr = gx->data() + (t + j) * ch;
                    const double* wr = w2.data() + j * ch;
                    for (std::size_t c = 0; c < ch; ++c) gxr[c] += wr[c] * gr[c];
                }
                if (gw) {
                    double* gwr = gw->data() + j * ch;
                    const double* xr = xv2.data() + (t + j) * ch;
                    for (std::size_t c = 0; c < ch; ++c) gwr[c] += xr[c] * gr[c];
                }
            }
        }
    });
    return o;
}

Var Graph::conv1d(Var x, Var weight, Var bias, std::size_t kernel, std::size_t stride,
                  std::size_t pad_left, std::size_t pad_right) {
    const Tensor& xv = value(x);
    const Tensor& w = value(weight);
    const std::size_t cin = xv.cols(), cout = w.rows(), width = kernel * cin;
    require(w.cols() == width, ErrorKind::shape,
            "conv1d: weight " + w.shape_str() + " for kernel " + std::to_string(kernel) +
                " x " + std::to_string(cin) + " channels");
    require(stride > 0 && xv.rows() + pad_left + pad_right >= kernel, ErrorKind::shape,
            "conv1d: input too short for kernel");
    const std::size_t tin = xv.rows();
    const std::size_t tout = (tin + pad_left + pad_right - kernel) / stride + 1;
    Tensor cols(tout, width);
    for (std::size_t t = 0; t < tout; ++t)
        for (std::size_t j = 0; j < kernel; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) -
                                       static_cast<std::ptrdiff_t>(pad_left);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(tin)) continue;
            std::copy_n(xv.data() + static_cast<std::size_t>(src) * cin, cin,
                        cols.data() + t * width + j * cin);
        }
    Tensor out(tout, cout);
    if (bias.valid()) {
        const Tensor& b = value(bias);
        require(b.size() == cout, ErrorKind::shape, "conv1d bias width");
        for (std::size_t t = 0; t < tout; ++t) std::copy_n(b.data(), cout, out.data() + t * cout);
    }
    kernels::gemm_nt(tout, cout, width, cols.data(), width, w.data(), width, out.data(), cout);
    const bool nb = bias.valid() && needs(bias);
    Var o = push(std::move(out), needs(x) || needs(weight) || nb);
    on_backward(o, [this, x, weight, bias, o, tin, tout, cin, cout, width, kernel, stride,
                    pad_left, nb, cols = std::move(cols)] {
        const Tensor& g = nodes_[o.id].grad;
        if (needs(weight))
            kernels::gemm_tn(cout, width, tout, g.data(), cout, cols.data(), width,
                             grad_ref(weight).data(), width);
        if (nb) {
            Tensor& gb = grad_ref(bias);
            for (std::size_t t = 0; t < tout; ++t)
                for (std::size_t c = 0; c < cout; ++c) gb[c] += g(t, c);
        }
        if (needs(x)) {
            Tensor dcols(tout, width);
            kernels::gemm_nn(tout, width, cout, g.data(), cout, val(weight.id).data(), width,
                             dcols.data(), width);
            Tensor& gx = grad_ref(x);
            for (std::size_t t = 0; t < tout; ++t)
                for (std::size_t j = 0; j < kernel; ++j) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) -
                                               static_cast<std::ptrdiff_t>(pad_left);
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(tin)) continue;
                    double* dst = gx.data() + static_cast<std::size_t>(src) * cin;
                    const double* s = dcols.data() + t * width + j * cin;
                    for (std::size_t c = 0; c < cin; ++c) dst[c] += s[c];
                }
        }
    });
    return o;
}

Var Graph::conv_transpose1d(Var x, Var weight, Var bias, std::size_t kernel, std::size_t stride,
                            std::size_t crop, std::size_t out_len) {
    const Tensor& xv = value(x);
    const Tensor& w = value(weight);
    const std::size_t cin = xv.cols(), tin = xv.rows();
    require(w.rows() == cin && w.cols() % kernel == 0, ErrorKind::shape,
            "conv_transpose1d: weight " + w.shape_str() + " for input " + xv.shape_str());
    const std::size_t cout = w.cols() / kernel, width = w.cols();
    Tensor cols(tin, width);
    kernels::gemm_nn(tin, width, cin, xv.data(), cin, w.data(), width, cols.data(), width);
    Tensor out(out_len, cout);
    if (bias.valid()) {
        const Tensor& b = value(bias);
        require(b.size() == cout, ErrorKind::shape, "conv_transpose1d bias width");
        for (std::size_t t = 0; t < out_len; ++t) std::copy_n(b.data(), cout, out.data() + t * cout);
    }
    for (std::size_t t = 0; t < tin; ++t)
        for (std::size_t j = 0; j < kernel; ++j) {
            const std::ptrdiff_t dst = static_cast<std::ptrdiff_t>(t * stride + j) -
                                       static_cast<std::ptrdiff_t>(crop);
            if (dst < 0 || dst >= static_cast<std::ptrdiff_t>(out_len)) continue;
            double* o = out.data() + static_cast<std::size_t>(dst) * cout;
            const double* s = cols.data() + t * width + j * cout;
            for (std::size_t c = 0; c < cout; ++c) o[c] += s[c];
        }
    const bool nb = bias.valid() && needs(bias);
    Var o = push(std::move(out), needs(x) || needs(weight) || nb);
    on_backward(o, [this, x, weight, bias, o, tin, cin, cout, width, kernel, stride, crop,
                    out_len, nb] {
        const Tensor& g = nodes_[o.id].grad;
        if (nb) {
            Tensor& gb = grad_ref(bias);
            for (std::size_t t = 0; t < out_len; ++t)
                for (std::size_t c = 0; c < cout; ++c) gb[c] += g(t, c);
        }
        if (!needs(x) && !needs(weight)) return;
        Tensor dcols(tin, width);
        for (std::size_t t = 0; t < tin; ++t)
            for (std::size_t j = 0; j < kernel; ++j) {
                const std::ptrdiff_t dst = static_cast<std::ptrdiff_t>(t * stride + j) -
                                           static_cast<std::ptrdiff_t>(crop);
                if (dst < 0 || dst >= static_cast<std::ptrdiff_t>(out_len)) continue;
                std::copy_n(g.data() + static_cast<std::size_t>(dst) * cout, cout,
                            dcols.data() + t * width + j * cout);
            }
        if (needs(x))
            kernels::gemm_nt(tin, cin, width, dcols.data(), width, val(weight.id).data(), width,
                             grad_ref(x).data(), cin);
        if (needs(weight))
            kernels::gemm_tn(cin, width, tin, val(x.id).data(), cin, dcols.data(), width,
                             grad_ref(weight).data(), width);
    });
    return o;
}

Var Graph::embedding(Var table, std::span<const int> tokens) {
    const Tensor& tv = value(table);
    std::vector<std::size_t> idx(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        require(tokens[i] >= 0 && static_cast<std::size_t>(tokens[i]) < tv.rows(), ErrorKind::index,
                "token " + std::to_string(tokens[i]) + " outside embedding table of " +
                    std::to_string(tv.rows()));
        idx[i] = static_cast<std::size_t>(tokens[i]);
    }
    return gather_rows(table, idx);
}

// ---------------------------------------------------------------------- heads

Var Graph::cross_entropy(Var logits, std::span<const int> targets) {
    const Tensor& z = value(logits);
    require(targets.size() == z.rows(), ErrorKind::shape,
            "cross_entropy: " + std::to_string(targets.size()) + " targets for " + z.shape_str());
    const std::size_t rows = z.rows(), k = z.cols();
    Tensor prob(rows, k);
    double loss = 0.0;
    std::vector<int> tg(targets.begin(), targets.end());
    for (std::size_t r = 0; r < rows; ++r) {
        require(tg[r] >= 0 && static_cast<std::size_t>(tg[r]) < k, ErrorKind::index,
                "cross_entropy target out of range");
        double mx = -1e300;
        for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, z(r, c));
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            prob(r, c) = std::exp(z(r, c) - mx);
            s += prob(r, c);
        }
        for (std::size_t c = 0; c < k; ++c) prob(r, c) /= s;
        loss += (mx + std::log(s)) - z(r, static_cast<std::size_t>(tg[r]));
    }
    loss /= static_cast<double>(rows);
    Var o = push(Tensor(1, 1, loss), needs(logits));
    on_backward(o, [this, logits, o, rows, k, prob = std::move(prob), tg = std::move(tg)] {
        const double g = nodes_[o.id].grad[0] / static_cast<double>(rows);
        Tensor& gz = grad_ref(logits);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < k; ++c) gz(r, c) += g * prob(r, c);
            gz(r, static_cast<std::size_t>(tg[r])) -= g;
        }
    });
    return o;
}

Var Graph::codebook_logits(Var x, const Tensor& codebook, double temperature, bool squared) {
    const Tensor& xv = value(x);
    require(temperature > 0.0, ErrorKind::config, "soft-label temperature must be positive");
    require(xv.cols() == codebook.cols(), ErrorKind::shape,
            "codebook_logits: vectors " + xv.shape_str() + " vs codebook " + codebook.shape_str());
    const std::size_t rows = xv.rows(), k = codebook.rows(), dim = codebook.cols();
    Tensor out(rows, k);
    for (std::size_t r = 0; r < rows; ++r) {
        kernels::sq_dist(xv.data() + r * dim, codebook.data(), k, dim, out.data() + r * k);
        for (std::size_t c = 0; c < k; ++c) {
            const double d = squared ? out(r, c) : std::sqrt(out(r, c));
            out(r, c) = -d / temperature;
        }
    }
    Var o = push(std::move(out), needs(x));
    on_backward(o, [this, x, o, codebook, temperature, squared, rows, k, dim] {
        const Tensor& g = nodes_[o.id].grad;
        const Tensor& z = nodes_[o.id].value;
        const Tensor& xv2 = val(x.id);
        Tensor& gx = grad_ref(x);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < k; ++c) {
                double coef;
                if (squared) {
                    coef = -2.0 / temperature;
                } else {
                    const double dist = -z(r, c) * temperature;
                    if (dist == 0.0) continue;  // subgradient 0 at the codeword
                    coef = -1.0 / (temperature * dist);
                }
                const double gc = g(r, c) * coef;
                if (gc == 0.0) continue;
                for (std::size_t i = 0; i < dim; ++i)
                    gx(r, i) += gc * (xv2(r, i) - codebook(c, i));
            }
    });
    return o;
}

Var Graph::log_spectrogram(Var signal, std::size_t fft_size, std::size_t hop, double eps) {
    const Tensor& s = value(signal);
    require(s.cols() == 1, ErrorKind::shape, "log_spectrogram expects a single-column signal");
    require(s.rows() >= fft_size && hop > 0, ErrorKind::length, "signal shorter than the FFT size");
    const DftBasis& basis = dft_basis(fft_size);
    const std::size_t bins = fft_size / 2 + 1;
    const std::size_t frames = (s.rows() - fft_size) / hop + 1;
    Tensor fr(frames, fft_size);
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t n = 0; n < fft_size; ++n) fr(f, n) = s[f * hop + n] * basis.window[n];
    Tensor re(frames, bins), im(frames, bins);
    kernels::gemm_nn(frames, bins, fft_size, fr.data(), fft_size, basis.cos_t.data(), bins,
                     re.data(), bins);
    kernels::gemm_nn(frames, bins, fft_size, fr.data(), fft_size, basis.sin_t.data(), bins,
                     im.data(), bins);
    Tensor out(frames, bins);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = 0.5 * std::log(re[i] * re[i] + im[i] * im[i] + eps);
    Var o = push(std::move(out), needs(signal));
    on_backward(o, [this, signal, o, frames, bins, fft_size, hop, eps, &basis, re = std::move(re),
                    im = std::move(im)] {
        const Tensor& g = nodes_[o.id].grad;
        Tensor dre(frames, bins), dim(frames, bins);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double p = re[i] * re[i] + im[i] * im[i] + eps;
            dre[i] = g[i] * re[i] / p;
            dim[i] = g[i] * im[i] / p;
        }
        Tensor dfr(frames, fft_size);
        kernels::gemm_nt(frames, fft_size, bins, dre.data(), bins, basis.cos_t.data(), bins,
                         dfr.data(), fft_size);
        kernels::gemm_nt(frames, fft_size, bins, dim.data(), bins, basis.sin_t.data(), bins,
                         dfr.data(), fft_size);
        Tensor& gs = grad_ref(signal);
        for (std::size_t f = 0; f < frames; ++f)
            for (std::size_t n = 0; n < fft_size; ++n)
                gs[f * hop + n] += dfr(f, n) * basis.window[n];
    });
    return o;
}

Tensor sinusoidal_positions(std::size_t rows, std::size_t dim, std::size_t offset) {
    Tensor pe(rows, dim);
    for (std::size_t r = 0; r < rows; ++r) {
        const double pos = static_cast<double>(r + offset);
        for (std::size_t i = 0; i < dim; i += 2) {
            const double freq =
                std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(dim));
            pe(r, i) = std::sin(pos * freq);
            if (i + 1 < dim) pe(r, i + 1) = std::cos(pos * freq);
        }
    }
    return pe;
}

}  // namespace lse
