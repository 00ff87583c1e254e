#include "lse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "json.hpp"
#include "lse/checkpoint.hpp"
#include "lse/errors.hpp"
#include "lse/wav.hpp"

namespace lse {

namespace {

constexpr double kSpeechBandHz = 1000.0;

double energy(const std::vector<double>& x) {
    double e = 0.0;
    for (double v : x) e += v * v;
    return e;
}

// Windowed-sinc FIR band-pass between lo and hi (Hz); lo = 0 gives a low-pass.
std::vector<double> bandpass_taps(double lo, double hi, int sr, std::size_t taps = 63) {
    std::vector<double> h(taps);
    const double c = static_cast<double>(taps - 1) / 2.0;
    auto sinc_lp = [&](double fc, double n) {
        const double w = 2.0 * fc / sr;
        return n == 0.0 ? w : std::sin(std::numbers::pi * w * n) / (std::numbers::pi * n);
    };
    for (std::size_t i = 0; i < taps; ++i) {
        const double n = static_cast<double>(i) - c;
        const double win = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (taps - 1));
        h[i] = (sinc_lp(hi, n) - (lo > 0.0 ? sinc_lp(lo, n) : 0.0)) * win;
    }
    return h;
}

std::vector<double> filter(const std::vector<double>& x, const std::vector<double>& h) {
    std::vector<double> y(x.size(), 0.0);
    const std::size_t c = h.size() / 2;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < h.size(); ++j) {
            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(i + c) - static_cast<std::ptrdiff_t>(j);
            if (s >= 0 && s < static_cast<std::ptrdiff_t>(x.size())) acc += h[j] * x[static_cast<std::size_t>(s)];
        }
        y[i] = acc;
    }
    return y;
}

void normalize_rms(std::vector<double>& x, double rms) {
    const double e = energy(x);
    if (e <= 0.0) return;
    const double g = rms / std::sqrt(e / static_cast<double>(x.size()));
    for (double& v : x) v *= g;
}

}  // namespace

void MixtureSpec::validate() const {
    require(snr_low_db <= snr_high_db, ErrorKind::config, "mixture SNR range is inverted");
    require(sample_rate > 0 && seconds > 0.0, ErrorKind::config, "mixture duration and rate must be positive");
    const double n = seconds * sample_rate;
    require(std::abs(n - std::round(n)) < 1e-9, ErrorKind::config,
            "mixture duration times sample rate must be integral");
    require(band_separation >= 0.0 && band_separation <= 1.0, ErrorKind::config,
            "band_separation must lie in [0, 1]");
}

Mixture synth_mixture(const Waveform& clean, const Waveform& noise, double snr_db) {
    clean.validate();
    noise.validate();
    require(clean.sample_rate == noise.sample_rate, ErrorKind::data, "clean and noise rates differ");
    const double ec = energy(clean.samples);
    require(ec > 0.0, ErrorKind::data, "clean signal has zero energy");
    std::vector<double> n(clean.size());
    for (std::size_t i = 0; i < n.size(); ++i) n[i] = noise.samples[i % noise.size()];
    const double en = energy(n);
    require(en > 0.0, ErrorKind::data, "noise signal has zero energy");

    double alpha = 0.0;
    if (!std::isinf(snr_db) || snr_db < 0.0) {
        require(std::isfinite(snr_db), ErrorKind::data, "SNR must be finite or +inf");
        alpha = std::sqrt(ec / (en * std::pow(10.0, snr_db / 10.0)));
    }
    Mixture m;
    m.snr_db = snr_db;
    m.clean = clean;
    m.noisy = clean;
    for (std::size_t i = 0; i < n.size(); ++i) m.noisy.samples[i] += alpha * n[i];
    double peak = 0.0;
    for (double v : m.noisy.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0.99) {
        const double g = 0.99 / peak;
        for (double& v : m.noisy.samples) v *= g;
        for (double& v : m.clean.samples) v *= g;
    }
    return m;
}

double measured_snr_db(const Mixture& m) {
    double ec = 0.0, en = 0.0;
    for (std::size_t i = 0; i < m.clean.size(); ++i) {
        const double d = m.noisy.samples[i] - m.clean.samples[i];
        ec += m.clean.samples[i] * m.clean.samples[i];
        en += d * d;
    }
    return 10.0 * std::log10(ec / en);
}

Waveform toy_clean(Rng& rng, int sr, double seconds) {
    const std::size_t len = static_cast<std::size_t>(std::llround(seconds * sr));
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const double f0 = 80.0 + 220.0 * U(rng);
    const double glide = (U(rng) - 0.5) * 0.4;  // relative f0 change over the utterance
    const double vib_rate = 3.0 + 4.0 * U(rng), vib_depth = 0.02 * U(rng);
    const std::size_t max_h = std::max<std::size_t>(1, static_cast<std::size_t>(kSpeechBandHz / f0));
    std::vector<double> amp(max_h), phase(max_h);
    // Formant-like emphasis around a random centre.
    const double formant = 250.0 + 600.0 * U(rng);
    for (std::size_t h = 0; h < max_h; ++h) {
        const double fh = f0 * static_cast<double>(h + 1);
        amp[h] = (0.4 + 0.6 * U(rng)) / std::sqrt(static_cast<double>(h + 1)) *
                 (1.0 + 2.0 * std::exp(-std::pow((fh - formant) / 300.0, 2.0)));
        phase[h] = 2.0 * std::numbers::pi * U(rng);
    }
    // Syllable envelope: a few raised-cosine bursts.
    const std::size_t bursts = 2 + static_cast<std::size_t>(U(rng) * 3.0);
    std::vector<double> centre(bursts), width(bursts), height(bursts);
    for (std::size_t b = 0; b < bursts; ++b) {
        centre[b] = (static_cast<double>(b) + 0.25 + 0.5 * U(rng)) / static_cast<double>(bursts);
        width[b] = (0.6 + 0.5 * U(rng)) / static_cast<double>(bursts);
        height[b] = 0.5 + 0.5 * U(rng);
    }
    const double ramp = 0.02 * sr;
    Waveform w{std::vector<double>(len), sr};
    double ph = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
        const double t = static_cast<double>(i) / sr;
        const double pos = static_cast<double>(i) / static_cast<double>(len);
        const double f = f0 * (1.0 + glide * pos) * (1.0 + vib_depth * std::sin(2.0 * std::numbers::pi * vib_rate * t));
        ph += 2.0 * std::numbers::pi * f / sr;
        double s = 0.0;
        for (std::size_t h = 0; h < max_h; ++h)
            if (f * static_cast<double>(h + 1) < 0.45 * sr)
                s += amp[h] * std::sin(static_cast<double>(h + 1) * ph + phase[h]);
        double env = 0.05;
        for (std::size_t b = 0; b < bursts; ++b) {
            const double d = (pos - centre[b]) / width[b];
            if (std::abs(d) < 0.5) env += height[b] * 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * d));
        }
        double r = 1.0;
        if (static_cast<double>(i) < ramp) r = static_cast<double>(i) / ramp;
        if (static_cast<double>(len - 1 - i) < ramp) r = std::min(r, static_cast<double>(len - 1 - i) / ramp);
        w.samples[i] = s * env * r;
    }
    double peak = 0.0;
    for (double v : w.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0.0)
        for (double& v : w.samples) v *= 0.5 / peak;
    return w;
}

Waveform toy_noise(Rng& rng, int sr, std::size_t samples, NoiseKind kind, double band_separation) {
    std::normal_distribution<double> N01(0.0, 1.0);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const std::size_t pad = 64;
    std::vector<double> x(samples + 2 * pad);
    for (double& v : x) v = N01(rng);
    const double nyq = 0.5 * sr;
    if (kind == NoiseKind::pink) {
        // Paul Kellet's economy pink filter.
        double b0 = 0, b1 = 0, b2 = 0;
        for (double& v : x) {
            b0 = 0.99765 * b0 + v * 0.0990460;
            b1 = 0.96300 * b1 + v * 0.2965164;
            b2 = 0.57000 * b2 + v * 1.0526913;
            v = b0 + b1 + b2 + v * 0.1848;
        }
    } else if (kind == NoiseKind::bandpass) {
        const double lo = 100.0 + (nyq - 600.0) * U(rng);
        const double hi = std::min(nyq * 0.98, lo + 300.0 + 1500.0 * U(rng));
        x = filter(x, bandpass_taps(lo, hi, sr));
    }
    normalize_rms(x, 1.0);
    // Split into the harmonic band and the band above it, then re-weight.
    std::vector<double> low = filter(x, bandpass_taps(0.0, kSpeechBandHz, sr));
    std::vector<double> high(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) high[i] = x[i] - low[i];
    const double el = energy(low), eh = energy(high);
    const double wl = el > 0.0 ? std::sqrt((1.0 - band_separation) / el) : 0.0;
    const double wh = eh > 0.0 ? std::sqrt(band_separation / eh) : 0.0;
    Waveform w{std::vector<double>(samples), sr};
    for (std::size_t i = 0; i < samples; ++i) w.samples[i] = wl * low[i + pad] + wh * high[i + pad];
    if (energy(w.samples) <= 0.0) w.samples = std::vector<double>(x.begin() + pad, x.begin() + pad + samples);
    normalize_rms(w.samples, 0.1);
    return w;
}

std::vector<Waveform> make_clean_set(std::size_t count, int sr, double seconds, std::uint64_t seed) {
    std::vector<Waveform> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, i));
        out.push_back(toy_clean(rng, sr, seconds));
    }
    return out;
}

std::vector<Mixture> make_toy_pairs(const MixtureSpec& spec, std::size_t count) {
    spec.validate();
    require(count >= 1, ErrorKind::config, "need at least one mixture");
    std::vector<Mixture> out;
    out.reserve(count);
    const std::size_t len = static_cast<std::size_t>(std::llround(spec.seconds * spec.sample_rate));
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(derive_seed(spec.seed, i));
        Waveform c = toy_clean(rng, spec.sample_rate, spec.seconds);
        const auto kind = static_cast<NoiseKind>(std::uniform_int_distribution<int>(0, 2)(rng));
        Waveform n = toy_noise(rng, spec.sample_rate, len, kind, spec.band_separation);
        const double snr = std::uniform_real_distribution<double>(spec.snr_low_db, spec.snr_high_db)(rng);
        out.push_back(synth_mixture(c, n, spec.snr_low_db == spec.snr_high_db ? spec.snr_low_db : snr));
    }
    return out;
}

Dataset make_toy_dataset(const DataConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    MixtureSpec spec{cfg.snr_low_db, cfg.snr_high_db, cfg.utterance_seconds, cfg.sample_rate,
                     derive_seed(seed, 0xDA7A), cfg.band_separation};
    Dataset ds;
    ds.sample_rate = cfg.sample_rate;
    ds.train = make_toy_pairs(spec, cfg.train_utterances);
    spec.seed = derive_seed(seed, 0x7E57);
    ds.test = make_toy_pairs(spec, cfg.test_utterances);
    return ds;
}

namespace {

Tensor row_of(const Waveform& w) {
    Tensor t(1, w.size());
    std::copy(w.samples.begin(), w.samples.end(), t.data());
    return t;
}

Waveform wave_of(const Tensor& t, int sr) {
    return Waveform{std::vector<double>(t.data(), t.data() + t.size()), sr};
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    Checkpoint ck;
    ck.config = nlohmann::json{{"kind", "dataset"},
                               {"sample_rate", ds.sample_rate},
                               {"train", ds.train.size()},
                               {"test", ds.test.size()}}
                    .dump();
    auto put = [&](const std::string& split, const std::vector<Mixture>& set) {
        for (std::size_t i = 0; i < set.size(); ++i) {
            const std::string p = split + "." + std::to_string(i) + ".";
            ck.add(p + "clean", row_of(set[i].clean));
            ck.add(p + "noisy", row_of(set[i].noisy));
            ck.add(p + "snr_db", Tensor(1, 1, set[i].snr_db));
        }
    };
    put("train", ds.train);
    put("test", ds.test);
    save_checkpoint(path, ck);
}

Dataset load_dataset(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(ck.config);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::data, path.string() + ": dataset header is not JSON: " + e.what());
    }
    require(meta.value("kind", "") == "dataset", ErrorKind::data, path.string() + " is not a dataset file");
    Dataset ds;
    ds.sample_rate = meta.at("sample_rate").get<int>();
    auto get = [&](const std::string& split, std::size_t count, std::vector<Mixture>& set) {
        for (std::size_t i = 0; i < count; ++i) {
            const std::string p = split + "." + std::to_string(i) + ".";
            set.push_back(Mixture{wave_of(ck.at(p + "noisy"), ds.sample_rate),
                                  wave_of(ck.at(p + "clean"), ds.sample_rate), ck.at(p + "snr_db")[0]});
        }
    };
    get("train", meta.at("train").get<std::size_t>(), ds.train);
    get("test", meta.at("test").get<std::size_t>(), ds.test);
    return ds;
}

void export_dataset_wavs(const std::filesystem::path& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    auto put = [&](const std::string& split, const std::vector<Mixture>& set) {
        for (std::size_t i = 0; i < set.size(); ++i) {
            const std::string stem = split + "_" + std::to_string(i);
            write_wav(dir / (stem + "_clean.wav"), set[i].clean);
            write_wav(dir / (stem + "_noisy.wav"), set[i].noisy);
        }
    };
    put("train", ds.train);
    put("test", ds.test);
}

}  // namespace lse
