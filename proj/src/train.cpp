#include "lse/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "lse/errors.hpp"
#include "lse/optim.hpp"

namespace lse {

namespace {

using json = nlohmann::json;

TokenGrid slice_tokens(const TokenGrid& g, std::size_t first, std::size_t count) {
    TokenGrid out(g.stages(), count);
    for (std::size_t n = 0; n < g.stages(); ++n)
        for (std::size_t t = 0; t < count; ++t) out.at(n, t) = g.at(n, first + t);
    return out;
}

LatentSeq slice_latent(const LatentSeq& z, std::size_t first, std::size_t count) {
    return LatentSeq{z.values.rows_slice(first, count)};
}

Waveform slice_wav(const Waveform& w, std::size_t first, std::size_t count) {
    Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(first),
                       w.samples.begin() + static_cast<std::ptrdiff_t>(first + count));
    return out;
}

LossTerms example_loss(Graph& g, const SeModel& m, const Codec& codec, const Example& ex) {
    GraphOutput out = model_graph(g, m, ex.input, &ex.target, codec.codebooks());
    return nll_loss(g, out, ex.target, is_discrete(m.variant));
}

json log_to_json(const TrainLog& log) {
    json a = json::array();
    for (const auto& r : log.rows)
        a.push_back({{"epoch", r.epoch}, {"split", r.split}, {"nll", r.nll}, {"mse_or_ce", r.mse_or_ce},
                     {"lr", r.lr}});
    return a;
}

TrainLog log_from_json(const json& a) {
    TrainLog log;
    for (const auto& r : a)
        log.rows.push_back({r.at("epoch").get<std::size_t>(), r.at("split").get<std::string>(),
                            r.at("nll").get<double>(), r.at("mse_or_ce").get<double>(),
                            r.at("lr").get<double>(), 0.0});
    return log;
}

}  // namespace

std::vector<PreparedUtterance> prepare_utterances(const std::vector<Mixture>& pairs, const Codec& codec) {
    std::vector<PreparedUtterance> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        PreparedUtterance u;
        u.noisy = p.noisy;
        u.clean = p.clean;
        u.noisy_latent = encode(p.noisy, codec);
        u.clean_latent = encode(p.clean, codec);
        u.noisy_tokens = rvq_quantize(u.noisy_latent, codec.codebooks()).tokens;
        u.clean_tokens = rvq_quantize(u.clean_latent, codec.codebooks()).tokens;
        out.push_back(std::move(u));
    }
    return out;
}

Example make_example(const PreparedUtterance& u, std::size_t first, std::size_t count, std::size_t factor) {
    require(count >= 1 && first + count <= u.frames(), ErrorKind::length,
            "segment [" + std::to_string(first) + ", " + std::to_string(first + count) + ") outside " +
                std::to_string(u.frames()) + " frames");
    Example ex;
    ex.input.noisy_tokens = slice_tokens(u.noisy_tokens, first, count);
    ex.input.noisy_latent = slice_latent(u.noisy_latent, first, count);
    ex.input.noisy_wav = slice_wav(u.noisy, first * factor, count * factor);
    ex.target.clean_tokens = slice_tokens(u.clean_tokens, first, count);
    ex.target.clean_latent = slice_latent(u.clean_latent, first, count);
    return ex;
}

Example whole_example(const PreparedUtterance& u, std::size_t factor) {
    return make_example(u, 0, u.frames(), factor);
}

LossValue evaluate_loss(const SeModel& m, const Codec& codec, const std::vector<Example>& set) {
    require(!set.empty(), ErrorKind::data, "evaluate_loss: empty set");
    LossValue v;
    for (const auto& ex : set) {
        Graph g(false);
        const LossTerms lt = example_loss(g, m, codec, ex);
        v.nll += lt.nll;
        v.mse_or_ce += lt.mse_or_ce;
    }
    v.nll /= static_cast<double>(set.size());
    v.mse_or_ce /= static_cast<double>(set.size());
    return v;
}

LossValue evaluate_loss(const SeModel& m, const Codec& codec, const std::vector<PreparedUtterance>& set) {
    std::vector<Example> ex;
    for (const auto& u : set) ex.push_back(whole_example(u, codec.downsample_factor()));
    return evaluate_loss(m, codec, ex);
}

void TrainLog::write_csv(std::ostream& os) const {
    os << "epoch,split,nll,mse_or_ce,lr,wall_seconds\n";
    os << std::setprecision(17);
    for (const auto& r : rows)
        os << r.epoch << ',' << r.split << ',' << r.nll << ',' << r.mse_or_ce << ',' << r.lr << ','
           << std::setprecision(6) << r.wall_seconds << std::setprecision(17) << '\n';
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream f(path);
    require(static_cast<bool>(f), ErrorKind::io, "cannot write " + path.string());
    write_csv(f);
    require(static_cast<bool>(f), ErrorKind::io, "write failed for " + path.string());
}

SeModel clone_model(const SeModel& m) {
    SeModel c;
    c.variant = m.variant;
    c.cfg = m.cfg;
    c.codec_cfg = m.codec_cfg;
    for (const auto& p : m.params) c.params.add(p->name, p->value, p->decay);
    return c;
}

TrainResult train(const SeModel& init, const Codec& codec, const std::vector<PreparedUtterance>& data,
                  const TrainConfig& cfg, const RunConfig& run, std::uint64_t seed, const TrainOptions& opts) {
    cfg.validate();
    require(!data.empty(), ErrorKind::data, "train: empty dataset");
    const std::size_t factor = codec.downsample_factor();
    const double seg_samples = cfg.segment_seconds * codec.config().sample_rate;
    const std::size_t seg = static_cast<std::size_t>(std::llround(seg_samples)) / factor;
    require(seg >= 1, ErrorKind::config, "segment shorter than one codec frame");

    std::size_t n_val = static_cast<std::size_t>(std::ceil(cfg.validation_fraction * static_cast<double>(data.size())));
    n_val = std::min(n_val, data.size() - 1);
    std::vector<const PreparedUtterance*> tr;
    std::vector<Example> val;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (i + n_val < data.size()) {
            require(data[i].frames() >= seg, ErrorKind::data,
                    "utterance " + std::to_string(i) + " has " + std::to_string(data[i].frames()) +
                        " frames, segment needs " + std::to_string(seg));
            tr.push_back(&data[i]);
        } else {
            val.push_back(whole_example(data[i], factor));
        }
    }

    TrainResult res{clone_model(init), clone_model(init), {}, {}, 0, 0, 0.0};
    SeModel& m = res.model;
    AdamW opt(m.params, AdamWOptions{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay});
    const std::size_t bs = cfg.batch_size;
    const std::size_t batches = (tr.size() + bs - 1) / bs;
    const std::size_t total_steps = batches * cfg.epochs;
    const std::size_t warmup = std::min(batches * cfg.warmup_epochs, total_steps - 1);
    const double max_lr = cfg.max_learning_rate();
    const bool staged = m.variant == Variant::c_nar_ft && m.cfg.staged_finetune;

    std::size_t start_epoch = 0;
    res.best_validation_nll = std::numeric_limits<double>::infinity();
    const auto last_path = opts.checkpoint_dir / "last.ckpt";
    const auto best_path = opts.checkpoint_dir / "best.ckpt";
    if (opts.resume && !opts.checkpoint_dir.empty() && std::filesystem::exists(last_path)) {
        const Checkpoint ck = load_checkpoint(last_path);
        const json h = json::parse(ck.config);
        require(h.value("kind", "") == "train_state", ErrorKind::data, last_path.string() + " is not a training state");
        require(h.at("variant").get<std::string>() == variant_name(m.variant), ErrorKind::config,
                "resume: checkpoint variant differs");
        ck.load_params(m.params, "model.");
        opt.load(ck, "opt.");
        start_epoch = h.at("next_epoch").get<std::size_t>();
        res.steps = h.at("steps").get<std::size_t>();
        res.best_epoch = h.at("best_epoch").get<std::size_t>();
        res.best_validation_nll = h.at("best_nll").get<double>();
        res.log = log_from_json(h.at("log"));
        const Tensor& sl = ck.at("state.step_losses");
        res.step_losses.assign(sl.data(), sl.data() + sl.size());
        if (std::filesystem::exists(best_path)) load_checkpoint(best_path).load_params(res.best_model.params, "model.");
    }

    const auto t0 = std::chrono::steady_clock::now();
    auto wall = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    std::size_t epochs_this_call = 0;
    for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        if (opts.max_steps && res.steps >= opts.max_steps) break;
        if (opts.stop_after_epochs && epochs_this_call >= opts.stop_after_epochs) break;
        ++epochs_this_call;
        if (staged) opt.set_frozen("enc.", epoch < m.cfg.staged_epochs);
        Rng rng(derive_seed(seed, 0x7000 + epoch));
        std::vector<std::size_t> order(tr.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        LossValue epoch_sum;
        std::size_t epoch_count = 0;
        double lr = 0.0;
        for (std::size_t b = 0; b < batches; ++b) {
            if (opts.max_steps && res.steps >= opts.max_steps) break;
            const std::size_t lo = b * bs, hi = std::min(lo + bs, tr.size());
            Grads grads;
            double batch_loss = 0.0;
            for (std::size_t i = lo; i < hi; ++i) {
                const PreparedUtterance& u = *tr[order[i]];
                const std::size_t first = std::uniform_int_distribution<std::size_t>(0, u.frames() - seg)(rng);
                const Example ex = make_example(u, first, seg, factor);
                Graph g(true);
                const LossTerms lt = example_loss(g, m, codec, ex);
                require(std::isfinite(g.value(lt.loss)[0]), ErrorKind::numerical,
                        "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
                g.backward(lt.loss);
                g.collect_grads(grads, 1.0 / static_cast<double>(hi - lo));
                epoch_sum.nll += lt.nll;
                epoch_sum.mse_or_ce += lt.mse_or_ce;
                batch_loss += lt.mse_or_ce;
                ++epoch_count;
            }
            clip_global_norm(grads, m.params, cfg.grad_clip);
            lr = lr_schedule(res.steps + 1, total_steps, warmup, max_lr);
            opt.step(grads, lr);
            ++res.steps;
            res.step_losses.push_back(batch_loss / static_cast<double>(hi - lo));
        }
        if (epoch_count == 0) break;
        const double n = static_cast<double>(epoch_count);
        res.log.rows.push_back({epoch, "train", epoch_sum.nll / n, epoch_sum.mse_or_ce / n, lr, wall()});
        LossValue v{epoch_sum.nll / n, epoch_sum.mse_or_ce / n};
        if (!val.empty()) {
            v = evaluate_loss(m, codec, val);
            res.log.rows.push_back({epoch, "validation", v.nll, v.mse_or_ce, lr, wall()});
        }
        if (v.nll < res.best_validation_nll) {
            res.best_validation_nll = v.nll;
            res.best_epoch = epoch;
            res.best_model = clone_model(m);
            if (!opts.checkpoint_dir.empty()) save_model(best_path, res.best_model, codec, run);
        }
        if (opts.progress) {
            std::ostringstream os;
            os << variant_name(m.variant) << " epoch " << epoch << " train nll " << epoch_sum.nll / n;
            if (!val.empty()) os << " validation nll " << v.nll;
            os << " lr " << lr;
            opts.progress(os.str());
        }
        if (!opts.checkpoint_dir.empty()) {
            Checkpoint ck;
            json h{{"kind", "train_state"},        {"variant", variant_name(m.variant)},
                   {"next_epoch", epoch + 1},       {"steps", res.steps},
                   {"best_epoch", res.best_epoch},  {"best_nll", res.best_validation_nll},
                   {"log", log_to_json(res.log)},   {"run", json::parse(run.to_json())}};
            ck.config = h.dump();
            ck.add_params(m.params, "model.");
            opt.save(ck, "opt.");
            Tensor sl(1, res.step_losses.size());
            std::copy(res.step_losses.begin(), res.step_losses.end(), sl.data());
            ck.add("state.step_losses", sl);
            save_checkpoint(last_path, ck);
        }
    }
    return res;
}

MetricReport evaluate_enhancement(const SeModel& m, const Codec& codec, const std::vector<Mixture>& test,
                                  std::size_t jobs, CostMode mode) {
    require(!test.empty(), ErrorKind::data, "evaluate_enhancement: empty test set");
    MetricReport rep;
    rep.variant = std::string(variant_name(m.variant));
    rep.flops_mode = std::string(cost_mode_name(mode));
    rep.flops_per_second_of_audio =
        flops_count(m.variant, m.cfg, m.codec_cfg, test.front().clean.duration_seconds(), mode).flops_per_second();
    rep.utterances.resize(test.size());
    const CodebookSet& cb = codec.codebooks();
    auto score = [&](std::size_t i) {
        const Mixture& p = test[i];
        EnhanceTrace tr;
        const Waveform est = enhance(p.noisy, m, codec, &tr);
        const std::size_t n = std::min(est.size(), p.clean.size());
        auto prefix = [n](const Waveform& w) {
            return Waveform{std::vector<double>(w.samples.begin(), w.samples.begin() + static_cast<std::ptrdiff_t>(n)),
                            w.sample_rate};
        };
        const Waveform ref = prefix(p.clean), noisy = prefix(p.noisy), e = prefix(est);
        UtteranceMetrics u;
        u.id = "utt" + std::to_string(i);
        u.si_sdr_db = si_sdr(e, ref);
        u.si_sdr_improvement_db = u.si_sdr_db - si_sdr(noisy, ref);
        u.log_spectral_distance_db = log_spectral_distance(e, ref);
        const LatentSeq target = encode(p.clean, codec);
        const LatentSeq got = rvq_dequantize(tr.tokens, cb);
        const std::size_t T = std::min(target.num_frames(), got.num_frames());
        double se = 0.0;
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t l = 0; l < target.latent_dim(); ++l) {
                const double d = got.values(t, l) - target.values(t, l);
                se += d * d;
            }
        u.latent_mse = se / static_cast<double>(T * target.latent_dim());
        u.token_accuracy = token_accuracy(tr.tokens, rvq_quantize(target, cb).tokens).per_stage;
        rep.utterances[i] = std::move(u);
    };
    jobs = std::max<std::size_t>(1, std::min(jobs, test.size()));
    if (jobs == 1) {
        for (std::size_t i = 0; i < test.size(); ++i) score(i);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(jobs);
        for (std::size_t j = 0; j < jobs; ++j)
            pool.emplace_back([&, j] {
                try {
                    for (std::size_t i = j; i < test.size(); i += jobs) score(i);
                } catch (...) {
                    errors[j] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    return rep;
}

}  // namespace lse
