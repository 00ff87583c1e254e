#include "lse/codec.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "lse/errors.hpp"
#include "lse/kernels.hpp"
#include "lse/metrics.hpp"
#include "lse/optim.hpp"

namespace lse {

namespace {

std::size_t level_channels(const CodecConfig& cfg, std::size_t level) {
    std::size_t c = cfg.base_channels;
    for (std::size_t i = 0; i < level; ++i) c = std::min(c * 2, cfg.max_channels);
    return c;
}

void add_conv(ParamSet& ps, const std::string& name, std::size_t cout, std::size_t cin,
              std::size_t kernel, Rng& rng) {
    const double bound = std::sqrt(3.0 / static_cast<double>(kernel * cin));
    ps.add(name + ".w", uniform_init(cout, kernel * cin, bound, rng));
    ps.add(name + ".b", Tensor(1, cout), false);
}

void add_residual(ParamSet& ps, const std::string& name, std::size_t c, Rng& rng) {
    add_conv(ps, name + ".a", c, c, 3, rng);
    add_conv(ps, name + ".b", c, c, 1, rng);
}

Var conv(Graph& g, const ParamSet& ps, const std::string& name, Var x, std::size_t kernel,
         std::size_t stride, std::size_t pad_left, std::size_t pad_right) {
    return g.conv1d(x, g.param(ps.at(name + ".w")), g.param(ps.at(name + ".b")), kernel, stride,
                    pad_left, pad_right);
}

Var residual(Graph& g, const ParamSet& ps, const std::string& name, Var x) {
    Var h = conv(g, ps, name + ".a", g.tanh(x), 3, 1, 1, 1);
    h = conv(g, ps, name + ".b", g.tanh(h), 1, 1, 0, 0);
    return g.add(x, h);
}

Tensor column(std::span<const double> s) {
    Tensor t(s.size(), 1);
    std::copy(s.begin(), s.end(), t.data());
    return t;
}

void check_encodable(const Waveform& wav, std::size_t factor) {
    wav.validate();
    require(wav.size() >= factor, ErrorKind::length,
            "waveform of " + std::to_string(wav.size()) + " samples is shorter than one frame (" +
                std::to_string(factor) + ")");
}

}  // namespace

void add_encoder_params(ParamSet& ps, const std::string& prefix, const CodecConfig& cfg, Rng& rng) {
    add_conv(ps, prefix + "in", cfg.base_channels, 1, 7, rng);
    for (std::size_t i = 0; i < cfg.strides.size(); ++i) {
        const std::size_t c = level_channels(cfg, i), s = cfg.strides[i];
        const std::string lvl = prefix + "down" + std::to_string(i);
        add_residual(ps, lvl + ".res", c, rng);
        add_conv(ps, lvl + ".conv", level_channels(cfg, i + 1), c, 2 * s, rng);
    }
    add_conv(ps, prefix + "out", cfg.latent_dim, level_channels(cfg, cfg.strides.size()), 3, rng);
}

void add_decoder_params(ParamSet& ps, const std::string& prefix, const CodecConfig& cfg, Rng& rng) {
    const std::size_t levels = cfg.strides.size();
    add_conv(ps, prefix + "in", level_channels(cfg, levels), cfg.latent_dim, 7, rng);
    for (std::size_t j = 0; j < levels; ++j) {
        const std::size_t i = levels - 1 - j;
        const std::size_t cin = level_channels(cfg, i + 1), cout = level_channels(cfg, i);
        const std::size_t s = cfg.strides[i], k = 2 * s;
        const std::string lvl = prefix + "up" + std::to_string(j);
        const double bound = std::sqrt(3.0 * static_cast<double>(s) / static_cast<double>(k * cin));
        ps.add(lvl + ".convt.w", uniform_init(cin, k * cout, bound, rng));
        ps.add(lvl + ".convt.b", Tensor(1, cout), false);
        add_residual(ps, lvl + ".res", cout, rng);
    }
    add_conv(ps, prefix + "out", 1, cfg.base_channels, 7, rng);
}

Var encoder_graph(Graph& g, const ParamSet& ps, const std::string& prefix, const CodecConfig& cfg,
                  Var wav) {
    Var h = conv(g, ps, prefix + "in", wav, 7, 1, 3, 3);
    for (std::size_t i = 0; i < cfg.strides.size(); ++i) {
        const std::size_t s = cfg.strides[i];
        const std::string lvl = prefix + "down" + std::to_string(i);
        h = residual(g, ps, lvl + ".res", h);
        h = conv(g, ps, lvl + ".conv", g.tanh(h), 2 * s, s, (s + 1) / 2, s / 2);
    }
    return conv(g, ps, prefix + "out", g.tanh(h), 3, 1, 1, 1);
}

Var decoder_graph(Graph& g, const ParamSet& ps, const std::string& prefix, const CodecConfig& cfg,
                  Var latent) {
    const std::size_t levels = cfg.strides.size();
    Var h = conv(g, ps, prefix + "in", latent, 7, 1, 3, 3);
    for (std::size_t j = 0; j < levels; ++j) {
        const std::size_t s = cfg.strides[levels - 1 - j];
        const std::string lvl = prefix + "up" + std::to_string(j);
        const std::size_t len = g.value(h).rows() * s;
        h = g.conv_transpose1d(g.tanh(h), g.param(ps.at(lvl + ".convt.w")),
                               g.param(ps.at(lvl + ".convt.b")), 2 * s, s, s / 2, len);
        h = residual(g, ps, lvl + ".res", h);
    }
    return conv(g, ps, prefix + "out", g.tanh(h), 7, 1, 3, 3);
}

Codec::Codec(const CodecConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(seed, 0xC0DEC));
    add_encoder_params(params_, "enc.", cfg_, rng);
    add_decoder_params(params_, "dec.", cfg_, rng);
    for (std::size_t n = 0; n < cfg_.num_stages; ++n) {
        Tensor cb = normal_init(cfg_.codebook_size, cfg_.latent_dim, 0.5 / std::sqrt(n + 1.0), rng);
        if (cfg_.reserve_zero_codeword)
            for (std::size_t l = 0; l < cfg_.latent_dim; ++l) cb(0, l) = 0.0;
        codebooks_.stages.push_back(std::move(cb));
    }
    codebooks_.frozen = true;
}

std::size_t Codec::frames_for(std::size_t samples) const noexcept {
    return samples / downsample_factor();
}

void Codec::save(Checkpoint& ck, const std::string& prefix) const {
    ck.add_params(params_, prefix);
    for (std::size_t n = 0; n < codebooks_.num_stages(); ++n)
        ck.add(prefix + "codebook." + std::to_string(n), codebooks_.stages[n]);
}

Codec Codec::load(const Checkpoint& ck, const CodecConfig& cfg, const std::string& prefix) {
    Codec c(cfg, 0);
    ck.load_params(c.params_, prefix);
    for (std::size_t n = 0; n < cfg.num_stages; ++n) {
        const Tensor& cb = ck.at(prefix + "codebook." + std::to_string(n));
        require(cb.rows() == cfg.codebook_size && cb.cols() == cfg.latent_dim, ErrorKind::shape,
                "codebook " + std::to_string(n) + " has shape " + cb.shape_str());
        c.codebooks_.stages[n] = cb;
    }
    c.codebooks_.validate();
    return c;
}

LatentSeq encode_with(const Waveform& wav, const ParamSet& params, const std::string& prefix,
                      const CodecConfig& cfg) {
    const std::size_t factor = cfg.downsample_factor();
    check_encodable(wav, factor);
    const std::size_t frames = wav.size() / factor;
    kernels::MacPause pause;
    Graph g(false);
    Var out = encoder_graph(g, params, prefix, cfg,
                            g.constant(column({wav.samples.data(), frames * factor})));
    LatentSeq z{g.value(out)};
    require(z.values.all_finite(), ErrorKind::numerical, "encoder produced non-finite latents");
    return z;
}

LatentSeq encode(const Waveform& wav, const Codec& codec) {
    return encode_with(wav, codec.params(), "enc.", codec.config());
}

Waveform decode(const LatentSeq& latent, const Codec& codec) {
    const CodecConfig& cfg = codec.config();
    require(latent.latent_dim() == cfg.latent_dim, ErrorKind::shape,
            "latent dim " + std::to_string(latent.latent_dim()) + " does not match codec dim " +
                std::to_string(cfg.latent_dim));
    require(latent.num_frames() >= 1, ErrorKind::length, "cannot decode an empty latent sequence");
    kernels::MacPause pause;
    Graph g(false);
    Var out = decoder_graph(g, codec.params(), "dec.", cfg, g.constant(latent.values));
    const Tensor& y = g.value(out);
    Waveform w{std::vector<double>(y.data(), y.data() + y.size()), cfg.sample_rate};
    require(y.all_finite(), ErrorKind::numerical, "decoder produced non-finite samples");
    return w;
}

Waveform reconstruct(const Waveform& wav, const Codec& codec) {
    LatentSeq z = encode(wav, codec);
    return decode(rvq_quantize(z, codec.codebooks()).reconstruction, codec);
}

std::vector<double> codebook_usage(const Codec& codec, const std::vector<Waveform>& set) {
    const CodebookSet& cb = codec.codebooks();
    std::vector<std::vector<char>> used(cb.num_stages(), std::vector<char>(cb.codebook_size(), 0));
    for (const Waveform& w : set) {
        TokenGrid tok = rvq_quantize(encode(w, codec), cb).tokens;
        for (std::size_t n = 0; n < tok.stages(); ++n)
            for (std::size_t t = 0; t < tok.frames(); ++t)
                used[n][static_cast<std::size_t>(tok.at(n, t))] = 1;
    }
    std::vector<double> frac;
    for (const auto& u : used)
        frac.push_back(static_cast<double>(std::count(u.begin(), u.end(), 1)) /
                       static_cast<double>(u.size()));
    return frac;
}

// ---------------------------------------------------------------------------
// Pretraining

namespace {

// Stage-wise k-means++ seeding followed by Lloyd iterations. Row 0 stays pinned
// at zero when reserved.
Tensor kmeans(const std::vector<std::vector<double>>& pts, std::size_t k, std::size_t dim,
              bool pin_zero, std::size_t iters, Rng& rng) {
    Tensor cb(k, dim);
    const std::size_t first = pin_zero ? 1 : 0;
    std::vector<double> d2(pts.size(), std::numeric_limits<double>::infinity());
    auto refresh = [&](std::size_t row) {
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double s = 0.0;
            for (std::size_t l = 0; l < dim; ++l) {
                const double d = pts[i][l] - cb(row, l);
                s += d * d;
            }
            d2[i] = std::min(d2[i], s);
        }
    };
    if (pin_zero) refresh(0);
    for (std::size_t r = first; r < k; ++r) {
        std::size_t pick;
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        if (r == 0 || !(total > 0.0) || !std::isfinite(total)) {
            pick = std::uniform_int_distribution<std::size_t>(0, pts.size() - 1)(rng);
        } else {
            double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            pick = pts.size() - 1;
            for (std::size_t i = 0; i < pts.size(); ++i) {
                u -= d2[i];
                if (u <= 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        for (std::size_t l = 0; l < dim; ++l) cb(r, l) = pts[pick][l];
        refresh(r);
    }
    std::vector<double> sums(k * dim);
    std::vector<std::size_t> counts(k);
    for (std::size_t it = 0; it < iters; ++it) {
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (const auto& p : pts) {
            const std::size_t j = nearest_codeword(p, cb).index;
            ++counts[j];
            for (std::size_t l = 0; l < dim; ++l) sums[j * dim + l] += p[l];
        }
        for (std::size_t r = first; r < k; ++r)
            if (counts[r] > 0)
                for (std::size_t l = 0; l < dim; ++l)
                    cb(r, l) = sums[r * dim + l] / static_cast<double>(counts[r]);
    }
    return cb;
}

// Nudges exact duplicates apart so the codebook invariant holds.
void separate_duplicates(Tensor& cb, bool pin_zero, Rng& rng) {
    std::normal_distribution<double> jitter(0.0, 1e-4);
    for (std::size_t a = pin_zero ? 1 : 0; a < cb.rows(); ++a)
        for (std::size_t b = 0; b < a; ++b) {
            bool same = true;
            for (std::size_t l = 0; l < cb.cols() && same; ++l) same = cb(a, l) == cb(b, l);
            if (same) {
                for (std::size_t l = 0; l < cb.cols(); ++l) cb(a, l) += jitter(rng);
                b = static_cast<std::size_t>(-1);  // restart scan for row a
            }
        }
}

struct EmaState {
    std::vector<Tensor> sums;                 // per stage K x L
    std::vector<std::vector<double>> counts;  // per stage K
    std::vector<std::vector<char>> used;      // this epoch
    std::vector<std::vector<std::size_t>> idle_epochs;
};

Var multires_spectral_l1(Graph& g, Var est, Var ref, const std::vector<std::size_t>& ffts) {
    Var total;
    for (std::size_t fft : ffts) {
        if (g.value(est).rows() < fft) continue;
        Var d = g.abs(g.sub(g.log_spectrogram(est, fft, fft / 4), g.log_spectrogram(ref, fft, fft / 4)));
        Var m = g.mean(d);
        total = total.valid() ? g.add(total, m) : m;
    }
    return total.valid() ? g.scale(total, 1.0 / static_cast<double>(ffts.size())) : total;
}

double holdout_si_sdr(const Codec& codec, const std::vector<const Waveform*>& holdout, bool quantized) {
    if (holdout.empty()) return 0.0;
    double acc = 0.0;
    for (const Waveform* w : holdout) {
        LatentSeq z = encode(*w, codec);
        if (quantized) z = rvq_quantize(z, codec.codebooks()).reconstruction;
        Waveform r = decode(z, codec);
        Waveform ref{std::vector<double>(w->samples.begin(), w->samples.begin() + r.size()),
                     w->sample_rate};
        acc += si_sdr(r, ref);
    }
    return acc / static_cast<double>(holdout.size());
}

}  // namespace

Codec pretrain_codec(const std::vector<Waveform>& clean, const CodecConfig& cfg,
                     const CodecTrainConfig& tcfg, std::uint64_t seed, CodecTrainReport* report,
                     const ProgressFn& progress) {
    require(!clean.empty(), ErrorKind::data, "codec pretraining needs at least one utterance");
    cfg.validate();
    tcfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t factor = cfg.downsample_factor();
    for (const Waveform& w : clean) {
        check_encodable(w, factor);
        require(w.sample_rate == cfg.sample_rate, ErrorKind::data,
                "utterance rate " + std::to_string(w.sample_rate) + " Hz differs from codec rate " +
                    std::to_string(cfg.sample_rate) + " Hz");
    }

    std::size_t n_hold = static_cast<std::size_t>(
        std::ceil(tcfg.holdout_fraction * static_cast<double>(clean.size())));
    if (clean.size() < 2) n_hold = 0;
    n_hold = std::min(n_hold, clean.size() - 1);
    std::vector<const Waveform*> train, holdout;
    for (std::size_t i = 0; i < clean.size(); ++i)
        (i + n_hold >= clean.size() ? holdout : train).push_back(&clean[i]);

    std::size_t seg = static_cast<std::size_t>(tcfg.segment_seconds * cfg.sample_rate) / factor * factor;
    seg = std::max(seg, factor);

    Codec codec(cfg, seed);
    CodebookSet& cbs = codec.codebooks();
    cbs.frozen = false;
    ParamSet& params = codec.params();
    AdamW opt(params, AdamWOptions{0.9, 0.99, 1e-8, 0.0});

    const std::size_t N = cfg.num_stages, K = cfg.codebook_size, L = cfg.latent_dim;
    const bool pin = cfg.reserve_zero_codeword;
    const std::size_t batches = (train.size() + tcfg.batch_size - 1) / tcfg.batch_size;
    const std::size_t total_steps = batches * tcfg.epochs;
    const std::size_t warmup = std::min(batches * tcfg.warmup_epochs, total_steps - 1);

    EmaState ema;
    ema.sums.assign(N, Tensor(K, L));
    ema.counts.assign(N, std::vector<double>(K, 0.0));
    ema.used.assign(N, std::vector<char>(K, 0));
    ema.idle_epochs.assign(N, std::vector<std::size_t>(K, 0));
    bool codebooks_ready = false;
    std::vector<std::vector<double>> latent_buffer;
    const std::size_t buffer_cap = 20000;

    CodecTrainReport rep;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        Rng rng(derive_seed(seed, 0x1000 + epoch));
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::vector<double>> epoch_latents;
        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (auto& u : ema.used) std::fill(u.begin(), u.end(), 0);

        for (std::size_t b = 0; b < batches; ++b) {
            Grads grads;
            const std::size_t lo = b * tcfg.batch_size;
            const std::size_t hi = std::min(lo + tcfg.batch_size, train.size());
            std::vector<Tensor> stat_sums(N, Tensor(K, L));
            std::vector<std::vector<double>> stat_counts(N, std::vector<double>(K, 0.0));
            for (std::size_t i = lo; i < hi; ++i) {
                const Waveform& w = *train[order[i]];
                const std::size_t usable = std::min(seg, w.size() / factor * factor);
                const std::size_t off =
                    std::uniform_int_distribution<std::size_t>(0, (w.size() - usable) / factor)(rng) * factor;
                const bool bypass =
                    !codebooks_ready ||
                    std::uniform_real_distribution<double>(0.0, 1.0)(rng) < tcfg.bypass_probability;

                Graph g(true);
                Var x = g.constant(column({w.samples.data() + off, usable}));
                Var e = encoder_graph(g, params, "enc.", cfg, x);
                const Tensor ev = g.value(e);
                const std::size_t T = ev.rows();
                for (std::size_t t = 0; t < T; ++t)
                    if (epoch_latents.size() < buffer_cap)
                        epoch_latents.emplace_back(ev.row(t).begin(), ev.row(t).end());

                Var z = e, commit;
                if (codebooks_ready) {
                    LatentSeq lv{ev};
                    QuantizeResult q = rvq_quantize(lv, cbs);
                    // Codebook statistics over the running residuals.
                    Tensor r = ev;
                    for (std::size_t n = 0; n < N; ++n)
                        for (std::size_t t = 0; t < T; ++t) {
                            const std::size_t k = static_cast<std::size_t>(q.tokens.at(n, t));
                            ema.used[n][k] = 1;
                            stat_counts[n][k] += 1.0;
                            for (std::size_t l = 0; l < L; ++l) {
                                stat_sums[n](k, l) += r(t, l);
                                r(t, l) -= cbs.stages[n](k, l);
                            }
                        }
                    Var qv = g.constant(q.reconstruction.values);
                    commit = g.scale(g.mean(g.square(g.sub(e, qv))), tcfg.commitment_weight);
                    if (!bypass) z = g.add(e, g.constant(q.reconstruction.values - ev));
                }
                Var y = decoder_graph(g, params, "dec.", cfg, z);
                Var loss = g.mean(g.abs(g.sub(y, x)));
                Var spec = multires_spectral_l1(g, y, x, tcfg.fft_sizes);
                if (spec.valid()) loss = g.add(loss, g.scale(spec, tcfg.spectral_weight));
                if (commit.valid()) loss = g.add(loss, commit);
                const double lv = g.value(loss)[0];
                require(std::isfinite(lv), ErrorKind::numerical,
                        "codec loss is not finite at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b));
                loss_sum += lv;
                ++loss_count;
                g.backward(loss);
                g.collect_grads(grads, 1.0 / static_cast<double>(hi - lo));
            }
            clip_global_norm(grads, params, 1.0);
            const double lr = lr_schedule(step + 1, total_steps, warmup, tcfg.learning_rate);
            opt.step(grads, lr);
            ++step;

            if (codebooks_ready) {
                const double d = tcfg.ema_decay;
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t k = pin ? 1 : 0; k < K; ++k) {
                        ema.counts[n][k] = d * ema.counts[n][k] + (1.0 - d) * stat_counts[n][k];
                        for (std::size_t l = 0; l < L; ++l)
                            ema.sums[n](k, l) = d * ema.sums[n](k, l) + (1.0 - d) * stat_sums[n](k, l);
                        if (ema.counts[n][k] > 1e-6)
                            for (std::size_t l = 0; l < L; ++l)
                                cbs.stages[n](k, l) = ema.sums[n](k, l) / ema.counts[n][k];
                    }
            }
        }

        if (!codebooks_ready) {
            latent_buffer = std::move(epoch_latents);
            Rng krng(derive_seed(seed, 0x2000));
            std::vector<std::vector<double>> resid = latent_buffer;
            for (std::size_t n = 0; n < N; ++n) {
                Tensor cb = kmeans(resid, K, L, pin, tcfg.kmeans_iterations, krng);
                separate_duplicates(cb, pin, krng);
                cbs.stages[n] = cb;
                std::fill(ema.counts[n].begin(), ema.counts[n].end(), 1.0);
                ema.sums[n] = cb;
                for (auto& p : resid) {
                    const std::size_t k = nearest_codeword(p, cb).index;
                    for (std::size_t l = 0; l < L; ++l) p[l] -= cb(k, l);
                }
            }
            codebooks_ready = true;
        } else if (!epoch_latents.empty()) {
            // Dead-code re-initialisation from this epoch's encoder outputs
            // (residualised up to the stage in question).
            Rng drng(derive_seed(seed, 0x3000 + epoch));
            std::vector<std::vector<double>> resid = epoch_latents;
            for (std::size_t n = 0; n < N; ++n) {
                bool changed = false;
                for (std::size_t k = pin ? 1 : 0; k < K; ++k) {
                    ema.idle_epochs[n][k] = ema.used[n][k] ? 0 : ema.idle_epochs[n][k] + 1;
                    if (ema.idle_epochs[n][k] < tcfg.dead_code_epochs) continue;
                    const auto& src =
                        resid[std::uniform_int_distribution<std::size_t>(0, resid.size() - 1)(drng)];
                    for (std::size_t l = 0; l < L; ++l) cbs.stages[n](k, l) = src[l];
                    ema.counts[n][k] = 1.0;
                    for (std::size_t l = 0; l < L; ++l) ema.sums[n](k, l) = src[l];
                    ema.idle_epochs[n][k] = 0;
                    changed = true;
                }
                if (changed) {
                    separate_duplicates(cbs.stages[n], pin, drng);
                    for (std::size_t k = 0; k < K; ++k)
                        for (std::size_t l = 0; l < L; ++l) ema.sums[n](k, l) = cbs.stages[n](k, l) * ema.counts[n][k];
                }
                for (auto& p : resid) {
                    const std::size_t k = nearest_codeword(p, cbs.stages[n]).index;
                    for (std::size_t l = 0; l < L; ++l) p[l] -= cbs.stages[n](k, l);
                }
            }
        }

        const double mean_loss = loss_sum / static_cast<double>(std::max<std::size_t>(loss_count, 1));
        rep.epoch_loss.push_back(mean_loss);
        if (progress)
            progress("codec epoch " + std::to_string(epoch + 1) + "/" + std::to_string(tcfg.epochs) +
                     " loss " + std::to_string(mean_loss));
    }

    cbs.frozen = true;
    cbs.validate();
    rep.steps = step;
    rep.holdout_si_sdr_db = holdout_si_sdr(codec, holdout.empty() ? train : holdout, false);
    rep.holdout_quantized_si_sdr_db = holdout_si_sdr(codec, holdout.empty() ? train : holdout, true);
    std::vector<Waveform> train_copy;
    for (const Waveform* w : train) train_copy.push_back(*w);
    rep.codebook_usage = codebook_usage(codec, train_copy);
    rep.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (report) *report = std::move(rep);
    return codec;
}

}  // namespace lse
