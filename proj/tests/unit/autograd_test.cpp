#include "doctest.h"

#include <cmath>
#include <functional>

#include "lse/autograd.hpp"
#include "testing.hpp"

using namespace lse;
using lse::testing::random_tensor;

namespace {

using Fn = std::function<Var(Graph&, Var)>;

// Max relative error between tape and central-difference gradients of sum(f(x) * w).
double check_op(const Fn& f, Tensor x, std::uint64_t seed = 1, double h = 1e-6) {
    Rng rng(seed);
    Tensor w;
    auto eval = [&](const Tensor& in, Tensor* grad) {
        Graph g(grad != nullptr);
        Var xi = g.input(in);
        Var y = f(g, xi);
        if (w.empty()) w = random_tensor(rng, g.value(y).rows(), g.value(y).cols());
        Var loss = g.sum(g.mul(y, g.constant(w)));
        if (grad) {
            g.backward(loss);
            *grad = g.grad(xi);
        }
        return g.value(loss)[0];
    };
    Tensor grad;
    eval(x, &grad);
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        x[i] = v + h;
        const double up = eval(x, nullptr);
        x[i] = v - h;
        const double dn = eval(x, nullptr);
        x[i] = v;
        const double fd = (up - dn) / (2 * h);
        worst = std::max(worst, std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-6}));
    }
    return worst;
}

}  // namespace

TEST_CASE("elementwise ops pass finite differences") {
    Rng rng(5);
    const Tensor x = random_tensor(rng, 3, 4);
    const Tensor c = random_tensor(rng, 3, 4);
    CHECK(check_op([&](Graph& g, Var a) { return g.tanh(a); }, x) < 1e-6);
    CHECK(check_op([&](Graph& g, Var a) { return g.silu(a); }, x) < 1e-6);
    CHECK(check_op([&](Graph& g, Var a) { return g.square(a); }, x) < 1e-6);
    CHECK(check_op([&](Graph& g, Var a) { return g.mul(a, g.constant(c)); }, x) < 1e-6);
    CHECK(check_op([&](Graph& g, Var a) { return g.glu(a); }, x) < 1e-6);
    CHECK(check_op([&](Graph& g, Var a) { return g.scale(g.sub(a, g.constant(c)), 0.7); }, x) < 1e-6);
}

TEST_CASE("structural ops pass finite differences") {
    Rng rng(6);
    const Tensor x = random_tensor(rng, 5, 3);
    const std::size_t idx[] = {4, 0, 0, 2};
    CHECK(check_op([&](Graph& g, Var a) { return g.slice_rows(a, 1, 3); }, x) < 1e-6);
    CHECK(check_op([&](Graph& g, Var a) { return g.slice_cols(a, 1, 2); }, x) < 1e-6);
    CHECK(check_op([&](Graph& g, Var a) { return g.concat_cols(a, g.square(a)); }, x) < 1e-6);
    CHECK(check_op([&](Graph& g, Var a) { return g.concat_rows(a, g.tanh(a)); }, x) < 1e-6);
    CHECK(check_op([&](Graph& g, Var a) { return g.pad_rows(a, 2, 1); }, x) < 1e-6);
    CHECK(check_op([&](Graph& g, Var a) { return g.gather_rows(a, idx); }, x) < 1e-6);
}

TEST_CASE("layers pass finite differences") {
    Rng rng(7);
    const Tensor x = random_tensor(rng, 6, 4);
    const Tensor w = random_tensor(rng, 5, 4), b = random_tensor(rng, 1, 5);
    const Tensor gain = random_tensor(rng, 1, 4), bias = random_tensor(rng, 1, 4);
    const Tensor dw = random_tensor(rng, 3, 4), db = random_tensor(rng, 1, 4);
    CHECK(check_op([&](Graph& g, Var a) { return g.linear(a, g.constant(w), g.constant(b)); }, x) < 1e-6);
    CHECK(check_op([&](Graph& g, Var a) { return g.layer_norm(a, g.constant(gain), g.constant(bias)); }, x) < 1e-5);
    CHECK(check_op([&](Graph& g, Var a) { return g.depthwise_conv(a, g.constant(dw), g.constant(db)); }, x) < 1e-6);
    for (bool causal : {false, true}) {
        AttentionSpec spec;
        spec.heads = 2;
        spec.causal = causal;
        CHECK(check_op([&](Graph& g, Var a) { return g.attention(a, g.tanh(a), g.square(a), spec); }, x) < 1e-5);
    }
}

TEST_CASE("parameter gradients of linear pass finite differences") {
    Rng rng(8);
    const Tensor x = random_tensor(rng, 4, 3);
    const Tensor b = random_tensor(rng, 1, 2);
    CHECK(check_op([&](Graph& g, Var w) { return g.linear(g.constant(x), w, g.constant(b)); }, random_tensor(rng, 2, 3)) < 1e-6);
}

TEST_CASE("convolutions pass finite differences") {
    Rng rng(9);
    const Tensor x = random_tensor(rng, 8, 2);
    const Tensor w = random_tensor(rng, 3, 3 * 2), b = random_tensor(rng, 1, 3);
    CHECK(check_op([&](Graph& g, Var a) { return g.conv1d(a, g.constant(w), g.constant(b), 3, 2, 1, 1); }, x) < 1e-6);
    const Tensor wt = random_tensor(rng, 2, 4 * 3), bt = random_tensor(rng, 1, 3);
    CHECK(check_op([&](Graph& g, Var a) { return g.conv_transpose1d(a, g.constant(wt), g.constant(bt), 4, 2, 1, 16); }, x) < 1e-6);
}

TEST_CASE("losses pass finite differences") {
    Rng rng(10);
    const Tensor x = random_tensor(rng, 4, 5);
    const int targets[] = {0, 4, 2, 2};
    CHECK(check_op([&](Graph& g, Var a) { return g.cross_entropy(a, targets); }, x) < 1e-6);
    const Tensor cb = random_tensor(rng, 6, 5);
    for (bool sq : {true, false}) CHECK(check_op([&](Graph& g, Var a) { return g.codebook_logits(a, cb, 0.7, sq); }, x) < 1e-5);
    const Tensor sig = random_tensor(rng, 64, 1);
    CHECK(check_op([&](Graph& g, Var a) { return g.log_spectrogram(a, 16, 8); }, sig) < 1e-4);
}

TEST_CASE("detach blocks the gradient and sum/mean reduce") {
    Graph g;
    Var x = g.input(Tensor(2, 2, 1.5));
    Var y = g.add(g.detach(x), g.scale(x, 3.0));
    Var loss = g.mean(y);
    g.backward(loss);
    CHECK(g.value(loss)[0] == doctest::Approx(6.0));
    CHECK(g.grad(x)[0] == doctest::Approx(0.75));
}

TEST_CASE("non-recording graph evaluates without gradients") {
    Graph g(false);
    Var x = g.input(Tensor(1, 3, 2.0));
    CHECK(g.value(g.sum(g.square(x)))[0] == 12.0);
    CHECK_FALSE(g.recording());
}

TEST_CASE("positional table starts with sin 0 and cos 0") {
    const Tensor p = sinusoidal_positions(3, 4);
    CHECK(p(0, 0) == 0.0);
    CHECK(p(0, 1) == 1.0);
    const Tensor q = sinusoidal_positions(1, 4, 2);
    CHECK(q(0, 0) == p(2, 0));
}
