#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "CLI11.hpp"
#include "lse/flops.hpp"
#include "lse/train.hpp"
#include "testing.hpp"

using namespace lse;
using namespace lse::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... a) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, a...);
    return buf;
}

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
    if (!ok) ++failures;
    std::cout << (ok ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
}

void note(const std::string& s) { std::cerr << "  " << s << '\n'; }

struct TrainedVariant {
    SeModel model;
    double before = 0.0;
    double after = 0.0;
    std::size_t steps = 0;
    double seconds = 0.0;
};

// Everything expensive is built once and shared between criteria.
struct Shared {
    fs::path work;
    RunConfig run = load_config(LSE_CONFIG_DIR "/desk.json");

    std::optional<Codec> codec;
    CodecTrainReport codec_report;
    double codec_seconds = 0.0;

    std::map<Variant, TrainedVariant> trainability;
    std::optional<TrainedVariant> enhancer;
    double enhancement_db = 0.0;

    const Codec& desk_codec() {
        if (!codec) {
            const auto clean = make_clean_set(run.codec_train.utterances, run.codec.sample_rate,
                                              run.codec_train.utterance_seconds, derive_seed(run.seed, 0xC1EA));
            const auto t0 = Clock::now();
            codec = pretrain_codec(clean, run.codec, run.codec_train, run.seed, &codec_report, note);
            codec_seconds = since(t0);
        }
        return *codec;
    }

    void train_all() {
        if (!trainability.empty()) return;
        const Codec& c = desk_codec();
        DataConfig dc = run.data;
        dc.train_utterances = 64;
        const Dataset ds = make_toy_dataset(dc, derive_seed(run.seed, 0x7A1B));
        const auto prep = prepare_utterances(ds.train, c);
        TrainConfig tc = run.train;
        tc.epochs = 25;
        const std::size_t held = static_cast<std::size_t>(std::ceil(tc.validation_fraction * prep.size()));
        const std::vector<PreparedUtterance> fit(prep.begin(), prep.end() - static_cast<std::ptrdiff_t>(held));
        for (Variant v : all_variants()) {
            const SeModel init = make_model(v, run.model, c, run.seed);
            TrainedVariant tv{clone_model(init)};
            tv.before = evaluate_loss(init, c, fit).mse_or_ce;
            TrainOptions opts;
            opts.max_steps = 200;
            const auto t0 = Clock::now();
            TrainResult res = train(init, c, prep, tc, run, run.seed, opts);
            tv.seconds = since(t0);
            tv.steps = res.steps;
            tv.after = evaluate_loss(res.model, c, fit).mse_or_ce;
            tv.model = std::move(res.model);
            note(fmt("%s: %zu steps, training loss %.4f -> %.4f in %.0f s", std::string(variant_name(v)).c_str(),
                     tv.steps, tv.before, tv.after, tv.seconds));
            trainability.emplace(v, std::move(tv));
        }
    }

    void train_enhancer() {
        if (enhancer) return;
        const Codec& c = desk_codec();
        const Dataset ds = make_toy_dataset(run.data, derive_seed(run.seed, 0xDA7A));
        const auto prep = prepare_utterances(ds.train, c);
        const SeModel init = make_model(Variant::c_nar, run.model, c, run.seed);
        TrainOptions opts;
        opts.progress = note;
        const auto t0 = Clock::now();
        TrainResult res = train(init, c, prep, run.train, run, run.seed, opts);
        TrainedVariant tv{std::move(res.best_model)};
        tv.steps = res.steps;
        tv.seconds = since(t0);
        MixtureSpec spec;
        spec.snr_low_db = spec.snr_high_db = 0.0;
        spec.seconds = run.data.utterance_seconds;
        spec.sample_rate = run.data.sample_rate;
        spec.band_separation = run.data.band_separation;
        spec.seed = derive_seed(run.seed, 0x0DB0);
        const MetricReport rep = evaluate_enhancement(tv.model, c, make_toy_pairs(spec, 16));
        enhancement_db = rep.aggregate().si_sdr_improvement_db;
        enhancer = std::move(tv);
    }
};

void rvq_correctness() {
    const auto t0 = Clock::now();
    Rng rng(0xA001);
    const CodebookSet cb = random_codebooks(rng, 4, 64, 16, true);
    const LatentSeq x{random_tensor(rng, 1000, 16)};
    const QuantizeResult q = rvq_quantize(x, cb);
    std::size_t mismatches = 0;
    for (std::size_t t = 0; t < 1000; ++t) {
        const auto ref = oracle_rvq_tokens(x.values.row(t), cb);
        for (std::size_t n = 0; n < 4; ++n) mismatches += q.tokens.at(n, t) != ref[n];
    }

    // Codeword-aligned inputs: sums of one codeword per stage with shrinking stage scales.
    CodebookSet aligned = random_codebooks(rng, 4, 64, 16, true);
    for (std::size_t n = 0; n < 4; ++n) aligned.stages[n] *= std::pow(0.05, static_cast<double>(n));
    const TokenGrid tok = random_tokens(rng, 4, 1000, 64);
    const LatentSeq sums = rvq_dequantize(tok, aligned);
    const QuantizeResult back = rvq_quantize(sums, aligned);
    const bool roundtrip = back.tokens == tok && back.reconstruction.values == sums.values;

    std::size_t increases = 0;
    std::vector<double> prev(1000);
    for (std::size_t t = 0; t < 1000; ++t)
        for (std::size_t l = 0; l < 16; ++l) prev[t] += x.values(t, l) * x.values(t, l);
    for (std::size_t n = 1; n <= 4; ++n) {
        const QuantizeResult p = rvq_quantize_prefix(x, cb, n);
        for (std::size_t t = 0; t < 1000; ++t) {
            double r = 0.0;
            for (std::size_t l = 0; l < 16; ++l) {
                const double e = x.values(t, l) - p.reconstruction.values(t, l);
                r += e * e;
            }
            increases += r > prev[t];
            prev[t] = r;
        }
    }
    const double secs = since(t0);
    report(1, "RVQ correctness", mismatches == 0 && roundtrip && increases == 0 && secs < 10.0,
           fmt("oracle mismatches %zu/4000, aligned round-trip %s, residual increases %zu, %.2f s", mismatches,
               roundtrip ? "bit-exact" : "differs", increases, secs));
}

void causality(Shared& s) {
    const auto t0 = Clock::now();
    const Codec codec(s.run.codec, s.run.seed);
    Influence stacks, dar, car;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        stacks.merge(causal_stack_influence(s.run.model.stack(s.run.model.ar_layers, true), 8, seed));
        dar.merge(d_ar_conditioning_influence(make_model(Variant::d_ar, s.run.model, codec, seed), 4, seed));
        car.merge(c_ar_conditioning_influence(make_model(Variant::c_ar, s.run.model, codec, seed), 6, seed));
    }
    const double secs = since(t0);
    bool ok = secs < 60.0;
    for (const Influence* i : {&stacks, &dar, &car}) ok = ok && i->max_outside <= 1e-6 && i->min_inside > 1e-8;
    report(2, "causality suite", ok,
           fmt("20 seeds; outside/inside: causal stack %.2e/%.2e, d-ar %.2e/%.2e, c-ar %.2e/%.2e; %.1f s",
               stacks.max_outside, stacks.min_inside, dar.max_outside, dar.min_inside, car.max_outside,
               car.min_inside, secs));
}

void fixed_points(Shared& s) {
    const Codec& codec = s.desk_codec();
    s.train_all();
    const Dataset ds = make_toy_dataset(s.run.data, derive_seed(s.run.seed, 0xF1C5));
    std::size_t d_ok = 0, c_ok = 0, runs = 0;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Mixture& mx = ds.test[seed % ds.test.size()];
        Waveform noisy = mx.noisy;
        noisy.samples.resize(32 * codec.downsample_factor());
        const LatentSeq z = encode(noisy, codec);
        const TokenGrid tok = rvq_quantize(z, codec.codebooks()).tokens;
        for (bool trained : {false, true}) {
            const SeModel d = trained ? clone_model(s.trainability.at(Variant::d_ar).model)
                                      : make_model(Variant::d_ar, s.run.model, codec, seed);
            const SeModel c = trained ? clone_model(s.trainability.at(Variant::c_ar).model)
                                      : make_model(Variant::c_ar, s.run.model, codec, seed);
            double diff = 0.0;
            d_ok += d_ar_fixed_point(d, tok);
            c_ok += c_ar_fixed_point(c, z, codec.codebooks(), &diff);
            worst = std::max(worst, diff);
            ++runs;
        }
    }
    report(3, "greedy fixed point", d_ok == runs && c_ok == runs,
           fmt("d-ar %zu/%zu, c-ar %zu/%zu exact (10 seeds, untrained and trained, 32 frames); "
               "c-ar max teacher-forced mean drift %.2e",
               d_ok, runs, c_ok, runs, worst));
}

void loss_identities(Shared& s) {
    const std::size_t T = 125, N = s.run.codec.num_stages, K = s.run.codec.codebook_size, L = s.run.codec.latent_dim;
    Rng rng(0xA004);
    Graph g(false);
    GraphOutput logits;
    for (std::size_t n = 0; n < N; ++n) logits.logits.push_back(g.constant(Tensor(T, K)));
    const TokenGrid y = random_tokens(rng, N, T, K);
    const double ce = nll_loss(g, logits, ModelTarget{y, {}}, true).nll;
    const double ce_err = std::abs(ce - std::log(static_cast<double>(K)));

    const Tensor mean = random_tensor(rng, T, L);
    const LatentSeq target{random_tensor(rng, T, L)};
    double sq = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) sq += (mean[i] - target.values[i]) * (mean[i] - target.values[i]);
    GraphOutput cont;
    cont.mean = g.constant(mean);
    const double nll = nll_loss(g, cont, ModelTarget{{}, target}, false).nll;
    const double expect = 0.5 * sq / T + 0.5 * static_cast<double>(L) * std::log(2 * std::numbers::pi);
    const double nll_err = std::abs(nll - expect);
    const double direct_err = std::abs(gaussian_nll_total(mean, target) / T - expect);
    report(4, "loss identities", ce_err <= 1e-9 && nll_err <= 1e-9 && direct_err <= 1e-9,
           fmt("|CE - ln %zu| = %.2e, |NLL - (MSE/2 + (L/2) ln 2pi)| = %.2e (graph) / %.2e (direct)", K, ce_err,
               nll_err, direct_err));
}

void gradients() {
    const auto t0 = Clock::now();
    const Codec codec(tiny_codec_config(), 0xA005);
    double worst = 0.0;
    std::size_t checked = 0;
    bool ok = true;
    std::string per;
    for (Variant v : all_variants()) {
        SeModel m = make_model(v, tiny_model_config(), codec, 5);
        const Example ex = whole_example(random_utterance(codec, 3, 500 + static_cast<int>(v)), codec.downsample_factor());
        const GradCheck r = grad_check(m, codec, ex, 7);
        ok = ok && r.checked > 0 && r.max_abs_grad > 0.0 && r.max_rel_error < 1e-3;
        worst = std::max(worst, r.max_rel_error);
        checked += r.checked;
        per += fmt(" %s=%.1e", std::string(variant_name(v)).c_str(), r.max_rel_error);
    }
    const double secs = since(t0);
    report(5, "gradient correctness", ok && secs < 300.0,
           fmt("H=8, T=3, %zu coordinates, max relative error %.2e (%s), %.1f s", checked, worst, per.c_str() + 1, secs));
}

void codec_pretraining(Shared& s) {
    s.desk_codec();
    const auto& r = s.codec_report;
    report(6, "codec pretraining", r.holdout_si_sdr_db >= 10.0 && s.codec_seconds < 900.0,
           fmt("held-out SI-SDR %.2f dB (through the quantizer %.2f dB), %zu steps, %.0f s", r.holdout_si_sdr_db,
               r.holdout_quantized_si_sdr_db, r.steps, s.codec_seconds));
}

void enhancement(Shared& s) {
    s.train_all();
    s.train_enhancer();
    double secs = s.enhancer->seconds;
    bool all = true;
    std::string per;
    for (const auto& [v, tv] : s.trainability) {
        const double ratio = tv.after / tv.before;
        all = all && ratio <= 0.5 && tv.steps == 200;
        secs += tv.seconds;
        per += fmt(" %s=%.2f", std::string(variant_name(v)).c_str(), ratio);
    }
    report(7, "enhancement smoke", s.enhancement_db >= 3.0 && all && secs <= 1800.0,
           fmt("c-nar SI-SDR improvement %+.2f dB at 0 dB SNR (16 mixtures, %zu steps); training loss ratio after "
               "200 steps:%s; %.0f s training",
               s.enhancement_db, s.enhancer->steps, per.c_str(), secs));
}

void flops_accounting(Shared& s) {
    const Codec tiny(tiny_codec_config(), 0xA008);
    const ModelConfig mc = tiny_model_config();
    Rng rng(0xA008);
    const Waveform noisy = random_wave(rng, 24 * tiny.downsample_factor());
    double worst = 0.0;
    bool zero_ok = true;
    for (CostMode mode : {CostMode::recompute, CostMode::kv_reuse})
        for (Variant v : all_variants()) {
            const SeModel m = make_model(v, mc, tiny, 1);
            const FlopReport r = flops_count(v, mc, tiny.config(), noisy.duration_seconds(), mode);
            const double measured = static_cast<double>(measured_macs(m, tiny, noisy, mode));
            if (r.macs() == 0) {
                zero_ok = zero_ok && measured == 0.0;
            } else {
                worst = std::max(worst, std::abs(measured - static_cast<double>(r.macs())) / static_cast<double>(r.macs()));
            }
        }
    const double dar = flops_count(Variant::d_ar, s.run.model, s.run.codec, 1.0).flops();
    const double dnar = flops_count(Variant::d_nar, s.run.model, s.run.codec, 1.0).flops();
    const double reuse = flops_count(Variant::d_ar, s.run.model, s.run.codec, 1.0, CostMode::kv_reuse).flops();
    const double cft = flops_count(Variant::c_ft, s.run.model, s.run.codec, 1.0).flops();
    const double dft = flops_count(Variant::d_ft, s.run.model, s.run.codec, 1.0).flops();
    report(8, "FLOPs accounting", worst <= 0.02 && zero_ok && dar / dnar >= 100.0 && cft == 0.0 && dft == 0.0,
           fmt("max analytic/measured gap %.3f%%, desk d-ar/d-nar %.0f (recompute; %.2f with kv reuse), "
               "c-ft %.0f, d-ft %.0f FLOPs",
               100 * worst, dar / dnar, reuse / dnar, cft, dft));
}

void fidelity(Shared& s) {
    const Codec& codec = s.desk_codec();
    s.train_all();
    const auto clean = make_clean_set(16, s.run.codec.sample_rate, 1.0, derive_seed(s.run.seed, 0xF1DE));
    const FidelityDelta cft = codec_fidelity_delta(s.trainability.at(Variant::c_ft).model.params, "enc.", codec, clean);
    const FidelityDelta cnar = codec_fidelity_delta(codec.params(), "enc.", codec, clean);
    const FidelityDelta joint =
        codec_fidelity_delta(s.trainability.at(Variant::c_nar_ft).model.params, "enc.", codec, clean);
    report(9, "fidelity degradation", cft.delta_si_sdr_db <= 0.0 &&
                                          std::abs(cnar.delta_si_sdr_db) < std::abs(cft.delta_si_sdr_db),
           fmt("delta SI-SDR on clean speech: c-ft %+.3f dB, c-nar %+.3f dB (c-nar-ft %+.3f dB); "
               "delta LSD c-ft %+.3f dB",
               cft.delta_si_sdr_db, cnar.delta_si_sdr_db, joint.delta_si_sdr_db, cft.delta_lsd_db));
}

int run_cli(const std::string& args, const fs::path& log) {
    const int st = std::system((std::string(LSE_CLI_PATH) + " " + args + " >>" + log.string() + " 2>&1").c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

fs::path last_path(const fs::path& log, const std::string& suffix) {
    std::ifstream f(log);
    std::string line, hit;
    while (std::getline(f, line))
        if (line.size() >= suffix.size() && line.compare(line.size() - suffix.size(), suffix.size(), suffix) == 0)
            hit = line;
    return hit;
}

// make-dataset -> codec-pretrain -> se-train c-nar -> eval; returns the artefacts to compare.
std::map<std::string, fs::path> smoke_chain(const fs::path& dir, const std::string& cfg) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path log = dir / "chain.log";
    const std::string common = " --config " + cfg + " --out-dir " + (dir / "runs").string() + " --jobs 1";
    std::map<std::string, fs::path> out;
    if (run_cli("make-dataset" + common, log) != 0) return out;
    const fs::path data = last_path(log, "dataset.bin");
    if (run_cli("codec-pretrain" + common, log) != 0) return out;
    const fs::path codec = last_path(log, "codec.ckpt");
    if (run_cli("se-train" + common + " --variant c-nar --codec " + codec.string() + " --dataset " + data.string(),
                log) != 0)
        return out;
    const fs::path best = last_path(log, "best.ckpt");
    if (run_cli("eval" + common + " --model " + best.string() + " --dataset " + data.string(), log) != 0) return out;
    out["dataset.bin"] = data;
    out["codec.ckpt"] = codec;
    out["best.ckpt"] = best;
    out["last.ckpt"] = best.parent_path() / "last.ckpt";
    out["metrics.csv"] = last_path(log, "metrics.csv");
    return out;
}

std::string bytes_of(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

void reproducibility(Shared& s) {
    const auto t0 = Clock::now();
    const std::string cfg = LSE_CONFIG_DIR "/smoke.json";
    const auto a = smoke_chain(s.work / "repro_a", cfg);
    const auto b = smoke_chain(s.work / "repro_b", cfg);
    bool ok = a.size() == 5 && b.size() == 5;
    std::string detail;
    for (const auto& [name, pa] : a) {
        const std::string x = bytes_of(pa), y = bytes_of(b.at(name));
        const bool same = !x.empty() && x == y;
        ok = ok && same;
        detail += fmt(" %s %s (%zu bytes);", name.c_str(), same ? "identical" : "DIFFERS", x.size());
    }
    if (a.size() != 5 || b.size() != 5) detail = " smoke chain failed, see chain.log under " + s.work.string() + ";";
    report(10, "reproducibility", ok, fmt("two sequential smoke chains:%s %.0f s", detail.c_str(), since(t0)));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks; prints one PASS/FAIL line per criterion"};
    std::string work = "acceptance_runs";
    std::vector<int> only;
    app.add_option("--work-dir", work, "Scratch directory for CLI runs");
    app.add_option("--only", only, "Run only these criteria")->delimiter(',')->check(CLI::Range(1, 10));
    CLI11_PARSE(app, argc, argv);

    Shared s;
    s.work = work;
    fs::create_directories(s.work);
    const std::set<int> pick(only.begin(), only.end());
    auto want = [&](int id) { return pick.empty() || pick.count(id) > 0; };
    const auto t0 = Clock::now();
    try {
        if (want(1)) rvq_correctness();
        if (want(2)) causality(s);
        if (want(3)) fixed_points(s);
        if (want(4)) loss_identities(s);
        if (want(5)) gradients();
        if (want(6)) codec_pretraining(s);
        if (want(7)) enhancement(s);
        if (want(8)) flops_accounting(s);
        if (want(9)) fidelity(s);
        if (want(10)) reproducibility(s);
    } catch (const std::exception& e) {
        std::cout << "FAIL aborted: " << e.what() << std::endl;
        return 1;
    }
    std::cout << (failures == 0 ? "all criteria passed" : fmt(failures == 1 ? "%d criterion failed" : "%d criteria failed", failures)) << " in "
              << fmt("%.0f s", since(t0)) << std::endl;
    return failures == 0 ? 0 : 1;
}
