#pragma once

// Trainable toy neural audio codec: a strided 1-D convolution encoder, a
// transposed-convolution decoder and a residual vector quantizer between them.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lse/autograd.hpp"
#include "lse/checkpoint.hpp"
#include "lse/config.hpp"
#include "lse/params.hpp"
#include "lse/rvq.hpp"

namespace lse {

class Codec {
public:
    Codec(const CodecConfig& cfg, std::uint64_t seed);

    const CodecConfig& config() const noexcept { return cfg_; }
    ParamSet& params() noexcept { return params_; }
    const ParamSet& params() const noexcept { return params_; }
    CodebookSet& codebooks() noexcept { return codebooks_; }
    const CodebookSet& codebooks() const noexcept { return codebooks_; }

    std::size_t downsample_factor() const noexcept { return cfg_.downsample_factor(); }
    // floor(samples / downsample_factor)
    std::size_t frames_for(std::size_t samples) const noexcept;

    // Tensors are stored as "<prefix>enc.*", "<prefix>dec.*", "<prefix>codebook.<n>".
    void save(Checkpoint& ck, const std::string& prefix = "codec.") const;
    static Codec load(const Checkpoint& ck, const CodecConfig& cfg, const std::string& prefix = "codec.");

private:
    CodecConfig cfg_;
    ParamSet params_;
    CodebookSet codebooks_;
};

// Registers encoder parameters ("<prefix>...") in `params`.
void add_encoder_params(ParamSet& params, const std::string& prefix, const CodecConfig& cfg, Rng& rng);
void add_decoder_params(ParamSet& params, const std::string& prefix, const CodecConfig& cfg, Rng& rng);

// Graph builders. `wav` is a (samples x 1) column whose length is a multiple of
// the downsample factor; the encoder returns (frames x latent_dim).
Var encoder_graph(Graph& g, const ParamSet& params, const std::string& prefix,
                  const CodecConfig& cfg, Var wav);
Var decoder_graph(Graph& g, const ParamSet& params, const std::string& prefix,
                  const CodecConfig& cfg, Var latent);

// Encodes with the codec's own encoder. Trailing samples beyond the last whole
// frame are dropped.
LatentSeq encode(const Waveform& wav, const Codec& codec);
// Same, but with an encoder parameter set other than the codec's (fine-tuned copies).
LatentSeq encode_with(const Waveform& wav, const ParamSet& params, const std::string& prefix,
                      const CodecConfig& cfg);
Waveform decode(const LatentSeq& latent, const Codec& codec);

// encode -> quantize -> dequantize -> decode.
Waveform reconstruct(const Waveform& wav, const Codec& codec);

struct CodecTrainReport {
    std::vector<double> epoch_loss;
    double holdout_si_sdr_db = 0.0;            // decode(encode(w))
    double holdout_quantized_si_sdr_db = 0.0;  // through the quantizer
    std::vector<double> codebook_usage;        // fraction of entries used per stage (training set)
    std::size_t steps = 0;
    double wall_seconds = 0.0;
};

using ProgressFn = std::function<void(const std::string&)>;

// Trains a codec on clean waveforms: time-domain L1 + multi-resolution
// log-spectral L1 + commitment loss, EMA codebooks with k-means++ initialisation
// and dead-code re-initialisation. The returned codec has frozen codebooks.
Codec pretrain_codec(const std::vector<Waveform>& clean, const CodecConfig& cfg,
                     const CodecTrainConfig& tcfg, std::uint64_t seed,
                     CodecTrainReport* report = nullptr, const ProgressFn& progress = {});

// Fraction of codewords per stage selected at least once when quantizing `set`.
std::vector<double> codebook_usage(const Codec& codec, const std::vector<Waveform>& set);

}  // namespace lse
