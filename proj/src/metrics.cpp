#include "lse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "lse/codec.hpp"
#include "lse/errors.hpp"

namespace lse {

double si_sdr_unclamped(const Waveform& est, const Waveform& ref) {
    require(est.size() == ref.size(), ErrorKind::length,
            "si_sdr: lengths differ (" + std::to_string(est.size()) + " vs " +
                std::to_string(ref.size()) + ")");
    double rr = 0.0, er = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        rr += ref.samples[i] * ref.samples[i];
        er += est.samples[i] * ref.samples[i];
    }
    require(rr > 0.0, ErrorKind::data, "si_sdr: reference has zero energy");
    const double alpha = er / rr;
    double tt = 0.0, ee = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double t = alpha * ref.samples[i];
        const double e = est.samples[i] - t;
        tt += t * t;
        ee += e * e;
    }
    if (ee == 0.0) return std::numeric_limits<double>::infinity();
    if (tt == 0.0) return -std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(tt / ee);
}

double si_sdr(const Waveform& est, const Waveform& ref) {
    return std::clamp(si_sdr_unclamped(est, ref), -kSiSdrClampDb, kSiSdrClampDb);
}

namespace {

std::vector<std::vector<double>> magnitudes(const std::vector<double>& x, std::size_t fft,
                                            std::size_t hop) {
    const std::size_t bins = fft / 2 + 1;
    const std::size_t frames = x.size() <= fft ? 1 : 1 + (x.size() - fft) / hop;
    std::vector<double> window(fft), cosv(fft), sinv(fft);
    for (std::size_t i = 0; i < fft; ++i) {
        window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                         static_cast<double>(fft));
        cosv[i] = std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(fft));
        sinv[i] = std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(fft));
    }
    std::vector<std::vector<double>> out(frames, std::vector<double>(bins));
    std::vector<double> buf(fft);
    for (std::size_t f = 0; f < frames; ++f) {
        for (std::size_t i = 0; i < fft; ++i) {
            const std::size_t s = f * hop + i;
            buf[i] = s < x.size() ? x[s] * window[i] : 0.0;
        }
        for (std::size_t k = 0; k < bins; ++k) {
            double re = 0.0, im = 0.0;
            for (std::size_t i = 0; i < fft; ++i) {
                const std::size_t p = (k * i) % fft;
                re += buf[i] * cosv[p];
                im -= buf[i] * sinv[p];
            }
            out[f][k] = std::sqrt(re * re + im * im);
        }
    }
    return out;
}

}  // namespace

double log_spectral_distance(const Waveform& est, const Waveform& ref, std::size_t fft_size,
                             std::size_t hop) {
    require(est.size() == ref.size(), ErrorKind::length, "log_spectral_distance: lengths differ");
    require(fft_size >= 2 && hop >= 1, ErrorKind::config, "log_spectral_distance: bad fft/hop");
    const auto a = magnitudes(est.samples, fft_size, hop);
    const auto b = magnitudes(ref.samples, fft_size, hop);
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t f = 0; f < a.size(); ++f)
        for (std::size_t k = 0; k < a[f].size(); ++k) {
            const double d = 20.0 * (std::log10(std::max(a[f][k], 1e-8)) -
                                     std::log10(std::max(b[f][k], 1e-8)));
            acc += d * d;
            ++count;
        }
    return std::sqrt(acc / static_cast<double>(count));
}

TokenAccuracy token_accuracy(const TokenGrid& pred, const TokenGrid& ref) {
    require(pred.stages() == ref.stages() && pred.frames() == ref.frames(), ErrorKind::shape,
            "token_accuracy: grids differ in shape");
    TokenAccuracy acc;
    std::size_t hits = 0;
    for (std::size_t n = 0; n < ref.stages(); ++n) {
        std::size_t h = 0;
        for (std::size_t t = 0; t < ref.frames(); ++t) h += pred.at(n, t) == ref.at(n, t);
        hits += h;
        acc.per_stage.push_back(ref.frames() ? static_cast<double>(h) / static_cast<double>(ref.frames()) : 0.0);
    }
    const std::size_t total = ref.stages() * ref.frames();
    acc.overall = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
    return acc;
}

FidelityDelta codec_fidelity_delta(const ParamSet& encoder, const std::string& prefix,
                                   const Codec& reference, const std::vector<Waveform>& clean) {
    require(!clean.empty(), ErrorKind::data, "codec_fidelity_delta: empty clean set");
    FidelityDelta out;
    for (const Waveform& w : clean) {
        const CodecConfig& cfg = reference.config();
        LatentSeq zr = encode(w, reference);
        LatentSeq zc = encode_with(w, encoder, prefix, cfg);
        Waveform yr = decode(rvq_quantize(zr, reference.codebooks()).reconstruction, reference);
        Waveform yc = decode(rvq_quantize(zc, reference.codebooks()).reconstruction, reference);
        Waveform ref{std::vector<double>(w.samples.begin(), w.samples.begin() + yr.size()), w.sample_rate};
        const double sr = si_sdr(yr, ref), sc = si_sdr(yc, ref);
        const double lr = log_spectral_distance(yr, ref), lc = log_spectral_distance(yc, ref);
        out.reference_si_sdr_db += sr;
        out.candidate_si_sdr_db += sc;
        out.per_utterance_delta_si_sdr.push_back(sc - sr);
        out.per_utterance_delta_lsd.push_back(lc - lr);
    }
    const double n = static_cast<double>(clean.size());
    for (double d : out.per_utterance_delta_si_sdr) out.delta_si_sdr_db += d;
    for (double d : out.per_utterance_delta_lsd) out.delta_lsd_db += d;
    out.delta_si_sdr_db /= n;
    out.delta_lsd_db /= n;
    out.reference_si_sdr_db /= n;
    out.candidate_si_sdr_db /= n;
    return out;
}

UtteranceMetrics MetricReport::aggregate() const {
    UtteranceMetrics m;
    m.id = "mean";
    if (utterances.empty()) return m;
    const double n = static_cast<double>(utterances.size());
    m.token_accuracy.assign(utterances.front().token_accuracy.size(), 0.0);
    for (const auto& u : utterances) {
        m.si_sdr_db += u.si_sdr_db / n;
        m.si_sdr_improvement_db += u.si_sdr_improvement_db / n;
        m.log_spectral_distance_db += u.log_spectral_distance_db / n;
        m.latent_mse += u.latent_mse / n;
        for (std::size_t s = 0; s < m.token_accuracy.size() && s < u.token_accuracy.size(); ++s)
            m.token_accuracy[s] += u.token_accuracy[s] / n;
    }
    return m;
}

namespace {

std::string fmt(double v, int prec = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

}  // namespace

void MetricReport::write_csv(std::ostream& os) const {
    const std::size_t stages = utterances.empty() ? 0 : utterances.front().token_accuracy.size();
    os << "id,variant,si_sdr_db,si_sdr_improvement_db,log_spectral_distance_db,latent_mse";
    for (std::size_t s = 0; s < stages; ++s) os << ",token_acc_stage" << s + 1;
    os << ",flops_per_second_of_audio,flops_mode\n";
    auto row = [&](const UtteranceMetrics& u) {
        os << u.id << ',' << variant << ',' << fmt(u.si_sdr_db) << ',' << fmt(u.si_sdr_improvement_db)
           << ',' << fmt(u.log_spectral_distance_db) << ',' << fmt(u.latent_mse);
        for (std::size_t s = 0; s < stages; ++s)
            os << ',' << fmt(s < u.token_accuracy.size() ? u.token_accuracy[s] : 0.0);
        os << ',' << fmt(flops_per_second_of_audio, 0) << ',' << flops_mode << '\n';
    };
    for (const auto& u : utterances) row(u);
    row(aggregate());
}

void MetricReport::print_table(std::ostream& os) const {
    const UtteranceMetrics m = aggregate();
    char line[256];
    std::snprintf(line, sizeof line, "%-12s %10s %10s %10s %12s %14s\n", "variant", "SI-SDR", "SI-SDRi",
                  "LSD", "latent MSE", "FLOPs/s audio");
    os << line;
    std::snprintf(line, sizeof line, "%-12s %10.3f %10.3f %10.3f %12.5f %14.4g\n", variant.c_str(),
                  m.si_sdr_db, m.si_sdr_improvement_db, m.log_spectral_distance_db, m.latent_mse,
                  flops_per_second_of_audio);
    os << line;
    if (!m.token_accuracy.empty()) {
        os << "token accuracy per stage:";
        for (double a : m.token_accuracy) os << ' ' << fmt(a, 4);
        os << '\n';
    }
    os << "utterances: " << utterances.size() << "; FLOPs counted in " << flops_mode
       << " mode (1 MAC = 2 FLOPs, codec encoder/decoder excluded)\n";
}

}  // namespace lse
