#pragma once

// Synthetic paired data: harmonic "speech" plus filtered noise mixed at a
// controlled SNR.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lse/config.hpp"
#include "lse/params.hpp"
#include "lse/rvq.hpp"

namespace lse {

struct MixtureSpec {
    double snr_low_db = -6.0;
    double snr_high_db = 3.0;
    double seconds = 1.0;
    int sample_rate = 8000;
    std::uint64_t seed = 0;
    double band_separation = 0.5;

    void validate() const;
};

struct Mixture {
    Waveform noisy;
    Waveform clean;  // peak-normalisation gain already applied
    double snr_db = 0.0;
};

// clean + alpha * noise at exactly `snr_db` (noise is cropped or looped to
// the clean length), then both signals are scaled so the mixture peak is at
// most 0.99. snr_db = +inf yields the clean signal.
Mixture synth_mixture(const Waveform& clean, const Waveform& noise, double snr_db);

// 10 log10(||clean||^2 / ||noisy - clean||^2).
double measured_snr_db(const Mixture& m);

// Seeded harmonic complex with f0 in [80, 300] Hz, a syllable-like envelope
// and onset/offset ramps.
Waveform toy_clean(Rng& rng, int sample_rate, double seconds);

enum class NoiseKind { white, pink, bandpass };

// Seeded noise. `band_separation` is the fraction of the noise spectrum
// pushed above the band where the harmonic signals carry most energy.
Waveform toy_noise(Rng& rng, int sample_rate, std::size_t samples, NoiseKind kind,
                   double band_separation);

std::vector<Waveform> make_clean_set(std::size_t count, int sample_rate, double seconds,
                                     std::uint64_t seed);
std::vector<Mixture> make_toy_pairs(const MixtureSpec& spec, std::size_t count);

struct Dataset {
    std::vector<Mixture> train;
    std::vector<Mixture> test;
    int sample_rate = 0;
};

Dataset make_toy_dataset(const DataConfig& cfg, std::uint64_t seed);

// Binary storage (checkpoint container) keeps the exact samples; WAV export is
// for listening only.
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);
void export_dataset_wavs(const std::filesystem::path& dir, const Dataset& ds);

}  // namespace lse
