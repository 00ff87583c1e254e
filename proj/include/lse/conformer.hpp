#pragma once

// Conformer stacks (bidirectional or causal), token embeddings and latent
// projection, built on the autograd graph.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lse/autograd.hpp"
#include "lse/config.hpp"
#include "lse/params.hpp"
#include "lse/rvq.hpp"

namespace lse {

// T x T row-major; allowed(t, s) iff s <= t.
struct CausalMask {
    std::size_t size = 0;
    std::vector<std::uint8_t> allowed;

    bool operator()(std::size_t t, std::size_t s) const { return allowed[t * size + s] != 0; }
    std::size_t count() const;
};

CausalMask causal_mask(std::size_t T);

// Per-layer key/value and convolution context for incremental causal decoding.
struct ConformerCache {
    struct Layer {
        Tensor keys;      // rows seen so far x H
        Tensor values;
        Tensor conv_tail; // last (kernel - 1) GLU outputs
    };
    std::vector<Layer> layers;
    std::size_t length = 0;  // rows consumed so far
};

void add_conformer_params(ParamSet& ps, const std::string& prefix, const ConformerConfig& cfg, Rng& rng);

// One table per stage, "<prefix><n>", each K x H.
void add_embedding_params(ParamSet& ps, const std::string& prefix, std::size_t stages,
                          std::size_t codebook_size, std::size_t hidden, Rng& rng);

// Sum over stages of the per-stage embeddings: (frames x H).
Var embed_tokens(Graph& g, const ParamSet& ps, const std::string& prefix, const TokenGrid& tokens);
Tensor embed_tokens(const TokenGrid& tokens, const std::vector<Tensor>& tables);

// latent (frames x L), weight H x L, bias 1 x H -> frames x H.
Var project_latent(Graph& g, Var latent, Var weight, Var bias);
Tensor project_latent(const LatentSeq& latent, const Tensor& weight, const Tensor& bias);

// Runs the stack on `x` (rows x H). Sinusoidal positions are added at the
// input: rows are numbered from cache->length when a cache is given, or
// restart every `group` rows when group > 0 (independent sequences packed in
// one matrix; attention is then restricted to each group).
// With a cache (causal stacks only) the new rows attend to all cached rows
// and the cache is extended.
Var conformer_forward(Graph& g, const ParamSet& ps, const std::string& prefix,
                      const ConformerConfig& cfg, Var x, ConformerCache* cache = nullptr,
                      std::size_t group = 0);

}  // namespace lse
