#pragma once

// Tape-based reverse-mode differentiation over row-major matrices.
//
// A Graph records every op applied during one forward evaluation. Nodes are
// addressed by Var handles; backward() replays the tape in reverse. A graph
// built with record=false is a plain evaluator (no closures, no grads), which
// is what inference uses.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "lse/params.hpp"
#include "lse/tensor.hpp"

namespace lse {

struct Var {
    int id = -1;
    bool valid() const noexcept { return id >= 0; }
};

struct AttentionSpec {
    std::size_t heads = 1;
    bool causal = false;
    // Absolute position of query row 0 relative to key row 0 (key/value reuse).
    std::size_t query_offset = 0;
    // When non-zero, rows are split into independent sequences of this length
    // (queries and keys aligned), e.g. T frames x N depth positions.
    std::size_t group = 0;
};

class Graph {
public:
    explicit Graph(bool record = true) : record_(record) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const noexcept { return record_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Leaves.
    Var constant(Tensor t);
    Var input(Tensor t);  // differentiable leaf
    Var param(const Param& p);

    const Tensor& value(Var v) const;
    // Gradient of a node after backward(); zero tensor if it received none.
    Tensor grad(Var v) const;

    void backward(Var loss);
    void backward(Var out, const Tensor& upstream);
    // Adds scale * dL/dparam for every parameter leaf into `into`.
    void collect_grads(Grads& into, double scale = 1.0) const;

    // Elementwise / structural.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var add_row(Var a, Var row);  // broadcast 1 x n over rows
    Var square(Var a);
    Var abs(Var a);
    Var tanh(Var a);
    Var silu(Var a);
    Var glu(Var a);  // [a | b] -> a * sigmoid(b)
    Var concat_rows(Var a, Var b);
    Var concat_cols(Var a, Var b);
    Var slice_rows(Var a, std::size_t begin, std::size_t count);
    Var slice_cols(Var a, std::size_t begin, std::size_t count);
    Var pad_rows(Var a, std::size_t before, std::size_t after);
    // Row i of the output is row index[i] of `a`.
    Var gather_rows(Var a, std::span<const std::size_t> index);
    Var detach(Var a);

    // Reductions.
    Var sum(Var a);
    Var mean(Var a);

    // Layers.
    Var linear(Var x, Var weight, Var bias);  // x W^T + b; weight [out x in]; bias may be invalid
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
    Var attention(Var q, Var k, Var v, const AttentionSpec& spec);
    // Valid-mode depthwise convolution: weight [K x C], bias [1 x C]; out rows = rows - K + 1.
    Var depthwise_conv(Var x, Var weight, Var bias);
    // weight [Cout x K*Cin] with tap-major columns.
    Var conv1d(Var x, Var weight, Var bias, std::size_t kernel, std::size_t stride,
               std::size_t pad_left, std::size_t pad_right);
    // weight [Cin x K*Cout]; output row t*stride + k - crop receives tap k of input row t.
    Var conv_transpose1d(Var x, Var weight, Var bias, std::size_t kernel, std::size_t stride,
                         std::size_t crop, std::size_t out_len);
    Var embedding(Var table, std::span<const int> tokens);

    // Losses / heads.
    // Mean over rows of -log softmax(logits)[target].
    Var cross_entropy(Var logits, std::span<const int> targets);
    // Logits -||x_i - c_k||^p / temperature against a constant codebook, p in {1, 2}.
    Var codebook_logits(Var x, const Tensor& codebook, double temperature, bool squared);
    // Hann-windowed log-magnitude STFT of a single-column signal: 0.5 * log(|X|^2 + eps).
    Var log_spectrogram(Var signal, std::size_t fft_size, std::size_t hop, double eps = 1e-7);

private:
    struct Node {
        Tensor value;
        const Tensor* ref = nullptr;
        const Param* param = nullptr;
        Tensor grad;
        bool needs_grad = false;
        std::function<void()> backward;
    };

    Var push(Tensor value, bool needs_grad);
    const Node& node(Var v) const;
    Node& node(Var v);
    bool needs(Var v) const { return node(v).needs_grad; }
    Tensor& grad_ref(Var v);
    const Tensor& val(int id) const {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        return n.ref ? *n.ref : n.value;
    }
    template <class F>
    void on_backward(Var out, F&& fn) {
        if (record_ && nodes_[static_cast<std::size_t>(out.id)].needs_grad)
            nodes_[static_cast<std::size_t>(out.id)].backward = std::forward<F>(fn);
    }

    bool record_;
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Sinusoidal absolute positional encoding rows [offset, offset + rows).
Tensor sinusoidal_positions(std::size_t rows, std::size_t dim, std::size_t offset = 0);

}  // namespace lse
