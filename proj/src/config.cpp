#include "lse/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lse/errors.hpp"

namespace lse {

using nlohmann::json;

namespace {

struct VariantInfo {
    Variant v;
    std::string_view name;
};

constexpr VariantInfo kVariants[] = {
    {Variant::d_ar, "d-ar"},   {Variant::d_nar, "d-nar"}, {Variant::d_nar_star, "d-nar-star"},
    {Variant::c_ar, "c-ar"},   {Variant::c_nar, "c-nar"}, {Variant::c_ft, "c-ft"},
    {Variant::d_ft, "d-ft"},   {Variant::c_nar_ft, "c-nar-ft"},
};

// Reads keys from one JSON object and reports any it did not consume.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        require(j_.is_object(), ErrorKind::config, path_ + " must be a JSON object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            fail(ErrorKind::config, path_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            require(seen_.count(it.key()) > 0, ErrorKind::config,
                    "unknown config key " + path_ + "." + it.key());
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

json codec_json(const CodecConfig& c) {
    return {{"sample_rate", c.sample_rate},       {"latent_dim", c.latent_dim},
            {"num_stages", c.num_stages},         {"codebook_size", c.codebook_size},
            {"strides", c.strides},               {"base_channels", c.base_channels},
            {"max_channels", c.max_channels},     {"reserve_zero_codeword", c.reserve_zero_codeword}};
}

json codec_train_json(const CodecTrainConfig& c) {
    return {{"utterances", c.utterances},
            {"utterance_seconds", c.utterance_seconds},
            {"segment_seconds", c.segment_seconds},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"warmup_epochs", c.warmup_epochs},
            {"learning_rate", c.learning_rate},
            {"commitment_weight", c.commitment_weight},
            {"ema_decay", c.ema_decay},
            {"dead_code_epochs", c.dead_code_epochs},
            {"kmeans_iterations", c.kmeans_iterations},
            {"bypass_probability", c.bypass_probability},
            {"spectral_weight", c.spectral_weight},
            {"fft_sizes", c.fft_sizes},
            {"holdout_fraction", c.holdout_fraction}};
}

json model_json(const ModelConfig& m) {
    return {{"hidden_dim", m.hidden_dim},
            {"num_heads", m.num_heads},
            {"conv_kernel_size", m.conv_kernel_size},
            {"ff_expansion", m.ff_expansion},
            {"nar_layers", m.nar_layers},
            {"ar_layers", m.ar_layers},
            {"noisy_layers", m.noisy_layers},
            {"temporal_layers", m.temporal_layers},
            {"depth_layers", m.depth_layers},
            {"max_sequence_length", m.max_sequence_length},
            {"soft_label_temperature", m.soft_label_temperature},
            {"soft_label_squared", m.soft_label_squared},
            {"staged_finetune", m.staged_finetune},
            {"staged_epochs", m.staged_epochs}};
}

json train_json(const TrainConfig& t) {
    return {{"batch_size", t.batch_size},
            {"epochs", t.epochs},
            {"warmup_epochs", t.warmup_epochs},
            {"base_learning_rate", t.base_learning_rate},
            {"weight_decay", t.weight_decay},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"adam_eps", t.adam_eps},
            {"grad_clip", t.grad_clip},
            {"segment_seconds", t.segment_seconds},
            {"validation_fraction", t.validation_fraction}};
}

json data_json(const DataConfig& d) {
    return {{"sample_rate", d.sample_rate},
            {"utterance_seconds", d.utterance_seconds},
            {"snr_low_db", d.snr_low_db},
            {"snr_high_db", d.snr_high_db},
            {"train_utterances", d.train_utterances},
            {"test_utterances", d.test_utterances},
            {"band_separation", d.band_separation}};
}

bool integral(double x) { return std::abs(x - std::round(x)) < 1e-9; }

}  // namespace

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v{Variant::d_ar, Variant::d_nar, Variant::d_nar_star,
                                        Variant::c_ar, Variant::c_nar, Variant::c_ft,
                                        Variant::d_ft, Variant::c_nar_ft};
    return v;
}

std::string_view variant_name(Variant v) noexcept {
    for (const auto& info : kVariants)
        if (info.v == v) return info.name;
    return "?";
}

std::optional<Variant> parse_variant(std::string_view name) noexcept {
    for (const auto& info : kVariants)
        if (info.name == name) return info.v;
    return std::nullopt;
}

bool is_discrete(Variant v) noexcept {
    return v == Variant::d_ar || v == Variant::d_nar || v == Variant::d_nar_star || v == Variant::d_ft;
}

bool is_autoregressive(Variant v) noexcept { return v == Variant::d_ar || v == Variant::c_ar; }

bool uses_encoder_copy(Variant v) noexcept {
    return v == Variant::c_ft || v == Variant::d_ft || v == Variant::c_nar_ft;
}

std::size_t CodecConfig::downsample_factor() const noexcept {
    std::size_t f = 1;
    for (std::size_t s : strides) f *= s;
    return f;
}

void CodecConfig::validate() const {
    require(sample_rate > 0, ErrorKind::config, "codec.sample_rate must be positive");
    require(latent_dim >= 1, ErrorKind::config, "codec.latent_dim must be >= 1");
    require(num_stages >= 1, ErrorKind::config, "codec.num_stages must be >= 1");
    require(codebook_size >= 2, ErrorKind::config, "codec.codebook_size must be >= 2");
    require(!strides.empty(), ErrorKind::config, "codec.strides must not be empty");
    for (std::size_t s : strides) require(s >= 1, ErrorKind::config, "codec.strides must be >= 1");
    require(base_channels >= 1 && max_channels >= base_channels, ErrorKind::config,
            "codec channels: need 1 <= base_channels <= max_channels");
}

void CodecTrainConfig::validate() const {
    require(utterances >= 1, ErrorKind::config, "codec_train.utterances must be >= 1");
    require(batch_size >= 1 && epochs >= 1, ErrorKind::config,
            "codec_train batch_size and epochs must be >= 1");
    require(warmup_epochs < epochs, ErrorKind::config, "codec_train.warmup_epochs must be < epochs");
    require(learning_rate >= 0.0, ErrorKind::config, "codec_train.learning_rate must be >= 0");
    require(ema_decay > 0.0 && ema_decay < 1.0, ErrorKind::config, "codec_train.ema_decay in (0,1)");
    require(bypass_probability >= 0.0 && bypass_probability < 1.0, ErrorKind::config,
            "codec_train.bypass_probability in [0,1)");
    require(segment_seconds > 0.0 && segment_seconds <= utterance_seconds, ErrorKind::config,
            "codec_train.segment_seconds must be in (0, utterance_seconds]");
    require(holdout_fraction >= 0.0 && holdout_fraction < 1.0, ErrorKind::config,
            "codec_train.holdout_fraction in [0,1)");
    for (std::size_t f : fft_sizes)
        require(f >= 8 && (f & (f - 1)) == 0, ErrorKind::config, "codec_train.fft_sizes: powers of two >= 8");
}

ConformerConfig ModelConfig::stack(std::size_t layers, bool causal) const {
    ConformerConfig c;
    c.num_layers = layers;
    c.hidden_dim = hidden_dim;
    c.num_heads = num_heads;
    c.conv_kernel_size = conv_kernel_size;
    c.ff_expansion = ff_expansion;
    c.causal = causal;
    c.max_sequence_length = max_sequence_length;
    return c;
}

void ConformerConfig::validate() const {
    require(num_layers >= 1, ErrorKind::config, "conformer num_layers must be >= 1");
    require(hidden_dim >= 2 && hidden_dim % 2 == 0, ErrorKind::config,
            "conformer hidden_dim must be even and >= 2");
    require(num_heads >= 1 && hidden_dim % num_heads == 0, ErrorKind::config,
            "conformer hidden_dim must be divisible by num_heads");
    require(conv_kernel_size % 2 == 1, ErrorKind::config, "conformer conv_kernel_size must be odd");
    require(ff_expansion >= 1, ErrorKind::config, "conformer ff_expansion must be >= 1");
    require(max_sequence_length >= 1, ErrorKind::config, "conformer max_sequence_length must be >= 1");
}

void ModelConfig::validate() const {
    stack(std::max<std::size_t>(1, nar_layers), false).validate();
    require(nar_layers >= 1 && ar_layers >= 1 && noisy_layers >= 1 && temporal_layers >= 1 &&
                depth_layers >= 1,
            ErrorKind::config, "model layer counts must be >= 1");
    require(soft_label_temperature > 0.0, ErrorKind::config,
            "model.soft_label_temperature must be positive");
}

double TrainConfig::max_learning_rate() const noexcept {
    return base_learning_rate * static_cast<double>(batch_size) / 256.0;
}

void TrainConfig::validate() const {
    require(batch_size >= 1 && epochs >= 1, ErrorKind::config, "train batch_size and epochs must be >= 1");
    require(warmup_epochs < epochs, ErrorKind::config, "train.warmup_epochs must be < train.epochs");
    require(base_learning_rate >= 0.0 && weight_decay >= 0.0, ErrorKind::config,
            "train learning rate and weight decay must be >= 0");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::config,
            "train betas must be in [0,1)");
    require(grad_clip > 0.0, ErrorKind::config, "train.grad_clip must be positive");
    require(segment_seconds > 0.0, ErrorKind::config, "train.segment_seconds must be positive");
    require(validation_fraction >= 0.0 && validation_fraction < 1.0, ErrorKind::config,
            "train.validation_fraction in [0,1)");
}

void DataConfig::validate() const {
    require(sample_rate > 0, ErrorKind::config, "data.sample_rate must be positive");
    require(snr_low_db <= snr_high_db, ErrorKind::config, "data.snr_low_db must be <= snr_high_db");
    require(integral(utterance_seconds * sample_rate), ErrorKind::config,
            "data.utterance_seconds * sample_rate must be an integer");
    require(train_utterances >= 1, ErrorKind::config, "data.train_utterances must be >= 1");
    require(band_separation >= 0.0 && band_separation <= 1.0, ErrorKind::config,
            "data.band_separation in [0,1]");
}

void RunConfig::validate() const {
    codec.validate();
    codec_train.validate();
    model.validate();
    train.validate();
    data.validate();
    require(data.sample_rate == codec.sample_rate, ErrorKind::config,
            "data.sample_rate must match codec.sample_rate");
    require(integral(train.segment_seconds * codec.sample_rate / static_cast<double>(codec.downsample_factor())),
            ErrorKind::config, "train.segment_seconds must cover a whole number of codec frames");
    require(train.segment_seconds <= data.utterance_seconds, ErrorKind::config,
            "train.segment_seconds must not exceed data.utterance_seconds");
}

std::string RunConfig::to_json() const {
    json j = {{"schema_version", kSchemaVersion},
              {"seed", seed},
              {"codec", codec_json(codec)},
              {"codec_train", codec_train_json(codec_train)},
              {"model", model_json(model)},
              {"train", train_json(train)},
              {"data", data_json(data)}};
    return j.dump(2);
}

std::uint64_t RunConfig::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : to_json()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string RunConfig::hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
}

RunConfig parse_config(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorKind::config, std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig cfg;
    Section root(j, "config");
    int version = -1;
    root.get("schema_version", version);
    require(version == RunConfig::kSchemaVersion, ErrorKind::config,
            "config.schema_version must be " + std::to_string(RunConfig::kSchemaVersion));
    root.get("seed", cfg.seed);
    if (const json* c = root.child("codec")) {
        Section s(*c, "codec");
        s.get("sample_rate", cfg.codec.sample_rate);
        s.get("latent_dim", cfg.codec.latent_dim);
        s.get("num_stages", cfg.codec.num_stages);
        s.get("codebook_size", cfg.codec.codebook_size);
        s.get("strides", cfg.codec.strides);
        s.get("base_channels", cfg.codec.base_channels);
        s.get("max_channels", cfg.codec.max_channels);
        s.get("reserve_zero_codeword", cfg.codec.reserve_zero_codeword);
        s.finish();
    }
    if (const json* c = root.child("codec_train")) {
        Section s(*c, "codec_train");
        auto& t = cfg.codec_train;
        s.get("utterances", t.utterances);
        s.get("utterance_seconds", t.utterance_seconds);
        s.get("segment_seconds", t.segment_seconds);
        s.get("batch_size", t.batch_size);
        s.get("epochs", t.epochs);
        s.get("warmup_epochs", t.warmup_epochs);
        s.get("learning_rate", t.learning_rate);
        s.get("commitment_weight", t.commitment_weight);
        s.get("ema_decay", t.ema_decay);
        s.get("dead_code_epochs", t.dead_code_epochs);
        s.get("kmeans_iterations", t.kmeans_iterations);
        s.get("bypass_probability", t.bypass_probability);
        s.get("spectral_weight", t.spectral_weight);
        s.get("fft_sizes", t.fft_sizes);
        s.get("holdout_fraction", t.holdout_fraction);
        s.finish();
    }
    if (const json* c = root.child("model")) {
        Section s(*c, "model");
        auto& m = cfg.model;
        s.get("hidden_dim", m.hidden_dim);
        s.get("num_heads", m.num_heads);
        s.get("conv_kernel_size", m.conv_kernel_size);
        s.get("ff_expansion", m.ff_expansion);
        s.get("nar_layers", m.nar_layers);
        s.get("ar_layers", m.ar_layers);
        s.get("noisy_layers", m.noisy_layers);
        s.get("temporal_layers", m.temporal_layers);
        s.get("depth_layers", m.depth_layers);
        s.get("max_sequence_length", m.max_sequence_length);
        s.get("soft_label_temperature", m.soft_label_temperature);
        s.get("soft_label_squared", m.soft_label_squared);
        s.get("staged_finetune", m.staged_finetune);
        s.get("staged_epochs", m.staged_epochs);
        s.finish();
    }
    if (const json* c = root.child("train")) {
        Section s(*c, "train");
        auto& t = cfg.train;
        s.get("batch_size", t.batch_size);
        s.get("epochs", t.epochs);
        s.get("warmup_epochs", t.warmup_epochs);
        s.get("base_learning_rate", t.base_learning_rate);
        s.get("weight_decay", t.weight_decay);
        s.get("beta1", t.beta1);
        s.get("beta2", t.beta2);
        s.get("adam_eps", t.adam_eps);
        s.get("grad_clip", t.grad_clip);
        s.get("segment_seconds", t.segment_seconds);
        s.get("validation_fraction", t.validation_fraction);
        s.finish();
    }
    if (const json* c = root.child("data")) {
        Section s(*c, "data");
        auto& d = cfg.data;
        s.get("sample_rate", d.sample_rate);
        s.get("utterance_seconds", d.utterance_seconds);
        s.get("snr_low_db", d.snr_low_db);
        s.get("snr_high_db", d.snr_high_db);
        s.get("train_utterances", d.train_utterances);
        s.get("test_utterances", d.test_utterances);
        s.get("band_separation", d.band_separation);
        s.finish();
    }
    root.finish();
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    require(static_cast<bool>(f), ErrorKind::config, "cannot read config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

}  // namespace lse
