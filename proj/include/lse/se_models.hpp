#pragma once

// Latent-domain speech enhancement models: discrete / continuous targets,
// autoregressive / non-autoregressive prediction and encoder fine-tuning.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lse/autograd.hpp"
#include "lse/codec.hpp"
#include "lse/config.hpp"
#include "lse/conformer.hpp"
#include "lse/params.hpp"
#include "lse/rvq.hpp"

namespace lse {

struct SeModel {
    Variant variant = Variant::c_nar;
    ModelConfig cfg;
    CodecConfig codec_cfg;
    ParamSet params;

    std::size_t stages() const noexcept { return codec_cfg.num_stages; }
    std::size_t codebook_size() const noexcept { return codec_cfg.codebook_size; }
    std::size_t latent_dim() const noexcept { return codec_cfg.latent_dim; }
};

// Builds the sub-networks the variant needs. Fine-tuning variants copy the
// codec's encoder into "enc.".
SeModel make_model(Variant variant, const ModelConfig& cfg, const Codec& codec, std::uint64_t seed);

// Unnormalised log-probabilities, one T x K matrix per stage.
struct DiscreteLogits {
    std::vector<Tensor> stages;

    std::size_t frames() const { return stages.empty() ? 0 : stages[0].rows(); }
    // Softmax along K for every (t, n).
    DiscreteLogits normalized() const;
    // Greedy choice, lowest index on ties.
    TokenGrid argmax() const;
};

// What a variant consumes; only the fields its input kind needs must be set.
struct ModelInput {
    TokenGrid noisy_tokens;   // D-AR, D-NAR
    LatentSeq noisy_latent;   // D-NAR*, C-AR, C-NAR
    Waveform noisy_wav;       // C-FT, D-FT, C-NAR-FT
};

// Teacher / target sequence.
struct ModelTarget {
    TokenGrid clean_tokens;   // discrete variants
    LatentSeq clean_latent;   // continuous variants
};

// Graph-level outputs: per-stage logits (discrete) or the mean sequence (continuous).
struct GraphOutput {
    std::vector<Var> logits;
    Var mean;
};

// Teacher-forced evaluation of any variant. `target` supplies the teacher
// sequence of the autoregressive variants and may be null otherwise.
GraphOutput model_graph(Graph& g, const SeModel& m, const ModelInput& in, const ModelTarget* target,
                        const CodebookSet& codebooks);

struct LossTerms {
    Var loss;              // what is minimised: CE, or half the per-frame squared error
    double nll = 0.0;      // CE, or the Gaussian NLL per frame including the constant
    double mse_or_ce = 0.0;
    double constant = 0.0; // (L/2) ln 2 pi for continuous targets, 0 otherwise
};

// Discrete: mean cross-entropy over T*N positions. Continuous: per-frame
// squared error summed over L and averaged over frames (MSE); the loss is MSE/2
// and the NLL adds the identity-covariance constant.
LossTerms nll_loss(Graph& g, const GraphOutput& out, const ModelTarget& target, bool discrete);

// Plain-tensor conveniences.
double cross_entropy(const DiscreteLogits& logits, const TokenGrid& target);
// Sum over frames of 1/2 ||x_t - m_t||^2 + (T L / 2) ln 2 pi.
double gaussian_nll_total(const Tensor& mean, const LatentSeq& target);

DiscreteLogits d_ar_forward(const SeModel& m, const TokenGrid& noisy, const TokenGrid& teacher);
DiscreteLogits d_nar_forward(const SeModel& m, const TokenGrid& noisy);
DiscreteLogits d_nar_forward(const SeModel& m, const LatentSeq& noisy);  // D-NAR*
Tensor c_ar_forward(const SeModel& m, const LatentSeq& teacher, const LatentSeq& noisy);
Tensor c_nar_forward(const SeModel& m, const LatentSeq& noisy);

struct FtOutput {
    Tensor mean;             // C-FT, C-NAR-FT
    DiscreteLogits logits;   // D-FT
};
FtOutput ft_forward(const SeModel& m, const Waveform& noisy, const CodebookSet& codebooks);

struct DecodeStats {
    std::size_t temporal_steps = 0;
    std::size_t depth_steps = 0;
    std::size_t feedback_quantizations = 0;
};

// With kv_cache the stacks run incrementally over cached keys/values;
// otherwise each generated token re-runs the stacks on its prefix. Both give
// the same tokens.
TokenGrid d_ar_decode(const SeModel& m, const TokenGrid& noisy, DecodeStats* stats = nullptr,
                      bool kv_cache = true);
// Returns the raw means; previously predicted frames are quantised before
// being fed back when `quantize_feedback` is set.
LatentSeq c_ar_decode(const SeModel& m, const LatentSeq& noisy, const CodebookSet& codebooks,
                      bool quantize_feedback = true, DecodeStats* stats = nullptr,
                      bool kv_cache = true);

enum class Route {
    none,
    d_ar_decode,
    d_nar_argmax,
    d_nar_star_argmax,
    c_ar_decode,
    c_nar_mean,
    c_ft_mean,
    d_ft_argmax,
    c_nar_ft_mean,
};
const char* route_name(Route r) noexcept;

struct EnhanceTrace {
    Route route = Route::none;
    TokenGrid tokens;        // final tokens handed to the decoder
    LatentSeq estimate;      // pre-quantisation estimate (continuous variants)
    DecodeStats stats;
};

struct EnhanceOptions {
    bool kv_cache = true;
    bool quantize_feedback = true;
};

// Noisy waveform -> enhanced waveform of length T * downsample_factor.
Waveform enhance(const Waveform& noisy, const SeModel& m, const Codec& codec,
                 EnhanceTrace* trace = nullptr, const EnhanceOptions& opts = {});

// Checkpoint: header holds {"kind", "variant", "run"}; tensors are
// "model.*" for the enhancement model and "codec.*" for the codec.
void save_model(const std::filesystem::path& path, const SeModel& m, const Codec& codec,
                const RunConfig& run);
Checkpoint model_checkpoint(const SeModel& m, const Codec& codec, const RunConfig& run);

struct LoadedModel {
    SeModel model;
    Codec codec;
    RunConfig run;
};
LoadedModel load_model(const std::filesystem::path& path);
LoadedModel model_from_checkpoint(const Checkpoint& ck);

}  // namespace lse
