#pragma once

// Intrusive signal metrics, token accuracy and the codec-fidelity probe.

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "lse/params.hpp"
#include "lse/rvq.hpp"

namespace lse {

class Codec;

constexpr double kSiSdrClampDb = 60.0;

// Scale-invariant SDR in dB, clamped to [-60, 60].
double si_sdr(const Waveform& est, const Waveform& ref);
double si_sdr_unclamped(const Waveform& est, const Waveform& ref);

// RMS over frames and bins of 20 (log10|S_est| - log10|S_ref|) using a Hann
// window; magnitudes are floored at 1e-8. Signals shorter than fft_size are
// zero-padded to one frame.
double log_spectral_distance(const Waveform& est, const Waveform& ref, std::size_t fft_size = 256,
                             std::size_t hop = 64);

struct TokenAccuracy {
    std::vector<double> per_stage;
    double overall = 0.0;
};

TokenAccuracy token_accuracy(const TokenGrid& pred, const TokenGrid& ref);

struct FidelityDelta {
    double delta_si_sdr_db = 0.0;  // candidate - reference (negative = degraded)
    double delta_lsd_db = 0.0;     // candidate - reference (positive = degraded)
    double reference_si_sdr_db = 0.0;
    double candidate_si_sdr_db = 0.0;
    std::vector<double> per_utterance_delta_si_sdr;
    std::vector<double> per_utterance_delta_lsd;
};

// Clean speech through (candidate encoder -> quantizer -> decoder) versus
// (reference encoder -> quantizer -> decoder). The candidate encoder is looked
// up in `encoder` under `prefix`.
FidelityDelta codec_fidelity_delta(const ParamSet& encoder, const std::string& prefix,
                                   const Codec& reference, const std::vector<Waveform>& clean);

struct UtteranceMetrics {
    std::string id;
    double si_sdr_db = 0.0;
    double si_sdr_improvement_db = 0.0;
    double log_spectral_distance_db = 0.0;
    double latent_mse = 0.0;
    std::vector<double> token_accuracy;  // per stage, tokens handed to the decoder
};

struct MetricReport {
    std::string variant;
    double flops_per_second_of_audio = 0.0;
    std::string flops_mode = "recompute";
    std::vector<UtteranceMetrics> utterances;

    UtteranceMetrics aggregate() const;  // means over utterances
    void write_csv(std::ostream& os) const;
    void print_table(std::ostream& os) const;
};

}  // namespace lse
