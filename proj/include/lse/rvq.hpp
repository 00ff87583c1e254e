#pragma once

// Latent-domain types and residual vector quantization.

#include <cstddef>
#include <span>
#include <vector>

#include "lse/tensor.hpp"

namespace lse {

struct Waveform {
    std::vector<double> samples;
    int sample_rate = 0;

    std::size_t size() const noexcept { return samples.size(); }
    double duration_seconds() const noexcept {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
    // Throws data errors for an empty or non-finite signal or a non-positive rate.
    void validate() const;
};

// Continuous codec latents. Stored frame-major: values is num_frames x latent_dim.
struct LatentSeq {
    Tensor values;

    std::size_t num_frames() const noexcept { return values.rows(); }
    std::size_t latent_dim() const noexcept { return values.cols(); }
};

// N x T codebook indices (0-based).
class TokenGrid {
public:
    TokenGrid() = default;
    TokenGrid(std::size_t stages, std::size_t frames, int fill = 0)
        : stages_(stages), frames_(frames), idx_(stages * frames, fill) {}

    std::size_t stages() const noexcept { return stages_; }
    std::size_t frames() const noexcept { return frames_; }
    int& at(std::size_t stage, std::size_t frame) { return idx_[stage * frames_ + frame]; }
    int at(std::size_t stage, std::size_t frame) const { return idx_[stage * frames_ + frame]; }
    std::span<const int> stage_row(std::size_t stage) const {
        return {idx_.data() + stage * frames_, frames_};
    }
    const std::vector<int>& raw() const noexcept { return idx_; }

    friend bool operator==(const TokenGrid&, const TokenGrid&) = default;

private:
    std::size_t stages_ = 0;
    std::size_t frames_ = 0;
    std::vector<int> idx_;
};

// N codebooks, each K x L.
struct CodebookSet {
    std::vector<Tensor> stages;
    bool frozen = true;

    std::size_t num_stages() const noexcept { return stages.size(); }
    std::size_t codebook_size() const noexcept { return stages.empty() ? 0 : stages[0].rows(); }
    std::size_t dim() const noexcept { return stages.empty() ? 0 : stages[0].cols(); }
    // N >= 1, K >= 2, consistent shapes, finite, no duplicate codewords within a stage.
    void validate() const;
    void validate_tokens(const TokenGrid& tokens) const;
};

struct Nearest {
    std::size_t index = 0;
    double sq_distance = 0.0;
};

// argmin_k ||v - c_k||^2 with ties going to the lowest index.
Nearest nearest_codeword(std::span<const double> v, const Tensor& codebook);

struct QuantizeResult {
    TokenGrid tokens;
    LatentSeq reconstruction;
};

QuantizeResult rvq_quantize(const LatentSeq& latent, const CodebookSet& cb);
// Quantizes with only the first `stages` codebooks (0 < stages <= N).
QuantizeResult rvq_quantize_prefix(const LatentSeq& latent, const CodebookSet& cb,
                                   std::size_t stages);
LatentSeq rvq_dequantize(const TokenGrid& tokens, const CodebookSet& cb);

struct SoftLabelOptions {
    double temperature = 1.0;
    // Softmax over -||v - c||^2 / temperature (default) or -||v - c|| / temperature.
    bool squared_distance = true;
};

std::vector<double> soft_labels(std::span<const double> v, const Tensor& codebook,
                                const SoftLabelOptions& opts = {});

}  // namespace lse
