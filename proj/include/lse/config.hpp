#pragma once

// Run configuration. Parsed from a versioned JSON document; unknown keys are
// rejected so that a typo can never silently fall back to a default.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lse {

enum class Variant { d_ar, d_nar, d_nar_star, c_ar, c_nar, c_ft, d_ft, c_nar_ft };

const std::vector<Variant>& all_variants();
std::string_view variant_name(Variant v) noexcept;  // "d-ar", "c-nar-ft", ...
std::optional<Variant> parse_variant(std::string_view name) noexcept;
bool is_discrete(Variant v) noexcept;
bool is_autoregressive(Variant v) noexcept;
bool uses_encoder_copy(Variant v) noexcept;  // C-FT, D-FT, C-NAR-FT

struct CodecConfig {
    int sample_rate = 8000;
    std::size_t latent_dim = 16;
    std::size_t num_stages = 4;
    std::size_t codebook_size = 64;
    std::vector<std::size_t> strides{4, 4, 4};
    std::size_t base_channels = 16;
    std::size_t max_channels = 64;
    // Codeword 0 of every stage is pinned to the zero vector.
    bool reserve_zero_codeword = true;

    std::size_t downsample_factor() const noexcept;
    void validate() const;
};

struct CodecTrainConfig {
    std::size_t utterances = 200;
    double utterance_seconds = 1.0;
    double segment_seconds = 0.25;
    std::size_t batch_size = 2;
    std::size_t epochs = 40;
    std::size_t warmup_epochs = 2;
    double learning_rate = 3e-3;
    double commitment_weight = 0.25;
    double ema_decay = 0.99;
    std::size_t dead_code_epochs = 2;
    std::size_t kmeans_iterations = 10;
    // Probability that a training segment skips quantization (continuous path).
    double bypass_probability = 0.3;
    double spectral_weight = 0.05;
    std::vector<std::size_t> fft_sizes{64, 128, 256};
    double holdout_fraction = 0.1;

    void validate() const;
};

struct ConformerConfig {
    std::size_t num_layers = 2;
    std::size_t hidden_dim = 32;
    std::size_t num_heads = 4;
    std::size_t conv_kernel_size = 7;
    std::size_t ff_expansion = 4;
    bool causal = false;
    std::size_t max_sequence_length = 4096;
    // Plain transformer layers (used by the depth stack) disable both.
    bool conv_module = true;
    bool macaron = true;

    void validate() const;
};

struct ModelConfig {
    std::size_t hidden_dim = 32;
    std::size_t num_heads = 4;
    std::size_t conv_kernel_size = 7;
    std::size_t ff_expansion = 4;
    std::size_t nar_layers = 2;       // D-NAR, D-NAR*, C-NAR, C-NAR-FT
    std::size_t ar_layers = 2;        // C-AR causal stack
    std::size_t noisy_layers = 2;     // D-AR bidirectional stack
    std::size_t temporal_layers = 2;  // D-AR causal stack
    std::size_t depth_layers = 2;     // D-AR depth transformer
    std::size_t max_sequence_length = 4096;
    double soft_label_temperature = 1.0;
    bool soft_label_squared = true;
    // C-NAR-FT: keep the encoder copy frozen for the first `staged_epochs`
    // (joint training from the start when false).
    bool staged_finetune = false;
    std::size_t staged_epochs = 0;

    ConformerConfig stack(std::size_t layers, bool causal) const;
    void validate() const;
};

struct TrainConfig {
    std::size_t batch_size = 8;
    std::size_t epochs = 25;
    std::size_t warmup_epochs = 2;
    double base_learning_rate = 0.005;  // max_lr = base * batch_size / 256
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    double segment_seconds = 1.0;  // 125 frames at 8 kHz / 64
    double validation_fraction = 0.1;

    double max_learning_rate() const noexcept;
    void validate() const;
};

struct DataConfig {
    int sample_rate = 8000;
    double utterance_seconds = 1.0;
    double snr_low_db = -6.0;
    double snr_high_db = 3.0;
    std::size_t train_utterances = 64;
    std::size_t test_utterances = 16;
    // Fraction of the noise spectrum placed outside the speech band (0 = full overlap).
    double band_separation = 0.5;

    void validate() const;
};

struct RunConfig {
    static constexpr int kSchemaVersion = 1;

    std::uint64_t seed = 1234;
    CodecConfig codec;
    CodecTrainConfig codec_train;
    ModelConfig model;
    TrainConfig train;
    DataConfig data;

    void validate() const;
    std::string to_json() const;  // canonical, pretty-printed
    std::uint64_t hash() const;   // FNV-1a over to_json()
    std::string hash_hex() const;
};

RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace lse
