#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lse/checkpoint.hpp"
#include "lse/codec.hpp"
#include "lse/config.hpp"
#include "lse/dataset.hpp"
#include "lse/errors.hpp"
#include "lse/flops.hpp"
#include "lse/metrics.hpp"
#include "lse/se_models.hpp"
#include "lse/train.hpp"
#include "lse/wav.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lse;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "runs";
    std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
    auto* opt = cmd->add_option("--config", c.config, "run configuration (JSON)");
    if (config_required) opt->required();
    cmd->add_option("--seed", c.seed, "override the configured seed");
    cmd->add_option("--out-dir", c.out_dir, "parent directory for run directories")->capture_default_str();
    cmd->add_option("--jobs", c.jobs, "worker threads for per-utterance work")->check(CLI::PositiveNumber);
}

RunConfig resolve_config(const Common& c) {
    RunConfig run = c.config.empty() ? RunConfig{} : load_config(c.config);
    if (c.seed) run.seed = *c.seed;
    run.validate();
    return run;
}

std::uint64_t fnv(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::io, "cannot read " + p.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::io, "cannot write " + p.string());
    f << text;
    require(static_cast<bool>(f), ErrorKind::io, "write failed for " + p.string());
}

// out_dir/<name>-<hash of config, command and input files>
fs::path run_dir(const Common& c, const std::string& name, const RunConfig& run,
                 const std::vector<fs::path>& inputs) {
    std::uint64_t h = fnv(run.to_json());
    h = fnv(name, h);
    for (const auto& p : inputs) h = fnv(read_file(p), h);
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    const fs::path dir = fs::path(c.out_dir) / (name + "-" + hex);
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
    write_file(dir / "config.json", run.to_json());
    return dir;
}

void save_codec_file(const fs::path& p, const Codec& codec, const RunConfig& run) {
    Checkpoint ck;
    ck.config = json{{"kind", "codec"}, {"run", json::parse(run.to_json())}}.dump();
    codec.save(ck, "codec.");
    save_checkpoint(p, ck);
}

Codec load_codec_file(const fs::path& p, RunConfig* run_out = nullptr) {
    const Checkpoint ck = load_checkpoint(p);
    json h;
    try {
        h = json::parse(ck.config);
    } catch (const json::exception&) {
        fail(ErrorKind::data, p.string() + ": header is not JSON");
    }
    require(h.value("kind", "") == "codec", ErrorKind::data, p.string() + " is not a codec checkpoint");
    const RunConfig run = parse_config(h.at("run").dump());
    if (run_out) *run_out = run;
    return Codec::load(ck, run.codec, "codec.");
}

std::vector<Waveform> cleans(const std::vector<Mixture>& set) {
    std::vector<Waveform> out;
    for (const auto& m : set) out.push_back(m.clean);
    return out;
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

int cmd_make_dataset(const Common& c, bool wav) {
    const RunConfig run = resolve_config(c);
    const fs::path dir = run_dir(c, "dataset", run, {});
    const Dataset ds = make_toy_dataset(run.data, derive_seed(run.seed, 0xDA7A));
    save_dataset(dir / "dataset.bin", ds);
    if (wav) export_dataset_wavs(dir / "wav", ds);
    std::cout << "dataset: " << ds.train.size() << " train / " << ds.test.size() << " test pairs\n"
              << (dir / "dataset.bin").string() << '\n';
    return 0;
}

int cmd_codec_pretrain(const Common& c) {
    const RunConfig run = resolve_config(c);
    const fs::path dir = run_dir(c, "codec", run, {});
    const auto clean = make_clean_set(run.codec_train.utterances, run.codec.sample_rate,
                                      run.codec_train.utterance_seconds, derive_seed(run.seed, 0xC1EA));
    CodecTrainReport rep;
    const Codec codec = pretrain_codec(clean, run.codec, run.codec_train, run.seed, &rep, log_line);
    save_codec_file(dir / "codec.ckpt", codec, run);
    std::ostringstream log;
    log << "epoch,loss\n" << std::setprecision(17);
    for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) log << e << ',' << rep.epoch_loss[e] << '\n';
    write_file(dir / "codec_log.csv", log.str());
    json summary{{"holdout_si_sdr_db", rep.holdout_si_sdr_db},
                 {"holdout_quantized_si_sdr_db", rep.holdout_quantized_si_sdr_db},
                 {"codebook_usage", rep.codebook_usage},
                 {"steps", rep.steps}};
    write_file(dir / "codec_report.json", summary.dump(2) + "\n");
    std::cout << "held-out SI-SDR " << rep.holdout_si_sdr_db << " dB (through quantizer "
              << rep.holdout_quantized_si_sdr_db << " dB), " << rep.wall_seconds << " s\n"
              << (dir / "codec.ckpt").string() << '\n';
    return 0;
}

int cmd_se_train(const Common& c, const std::string& variant_s, const std::string& codec_path,
                 const std::string& dataset_path, bool resume) {
    const auto variant = parse_variant(variant_s);
    require(variant.has_value(), ErrorKind::config, "unknown variant '" + variant_s + "'");
    const RunConfig run = resolve_config(c);
    RunConfig codec_run;
    const Codec codec = load_codec_file(codec_path, &codec_run);
    require(json::parse(codec_run.to_json()).at("codec") == json::parse(run.to_json()).at("codec"),
            ErrorKind::config, "codec settings in " + codec_path + " differ from the run configuration");
    const Dataset ds = load_dataset(dataset_path);
    require(ds.sample_rate == run.codec.sample_rate, ErrorKind::data, "dataset sample rate differs from the codec");
    const fs::path dir = run_dir(c, std::string("se-") + std::string(variant_name(*variant)), run,
                                 {codec_path, dataset_path});
    const auto prep = prepare_utterances(ds.train, codec);
    const SeModel init = make_model(*variant, run.model, codec, run.seed);
    TrainOptions opts;
    opts.checkpoint_dir = dir;
    opts.resume = resume;
    opts.progress = log_line;
    const TrainResult res = train(init, codec, prep, run.train, run, run.seed, opts);
    res.log.write_csv(dir / "train_log.csv");
    std::cout << variant_name(*variant) << ": " << res.steps << " steps, best validation NLL "
              << res.best_validation_nll << " at epoch " << res.best_epoch << '\n'
              << (dir / "best.ckpt").string() << '\n';
    return 0;
}

int cmd_enhance(const std::string& model_path, const std::string& in, const std::string& out) {
    const LoadedModel lm = load_model(model_path);
    const Waveform noisy = read_wav(in);
    const Waveform est = enhance(noisy, lm.model, lm.codec);
    write_wav(out, est);
    std::cout << out << ": " << est.size() << " samples\n";
    return 0;
}

int cmd_eval(const Common& c, const std::string& model_path, const std::string& dataset_path,
             const std::string& mode_s) {
    const LoadedModel lm = load_model(model_path);
    const Dataset ds = load_dataset(dataset_path);
    const CostMode mode = mode_s == "kv-reuse" ? CostMode::kv_reuse : CostMode::recompute;
    const fs::path dir = run_dir(c, "eval-" + std::string(variant_name(lm.model.variant)) + "-" + mode_s, lm.run,
                                 {model_path, dataset_path});
    const MetricReport rep = evaluate_enhancement(lm.model, lm.codec, ds.test, c.jobs, mode);
    std::ostringstream csv;
    rep.write_csv(csv);
    write_file(dir / "metrics.csv", csv.str());
    rep.print_table(std::cout);
    std::cout << (dir / "metrics.csv").string() << '\n';
    return 0;
}

int cmd_bench_flops(const Common& c, const std::string& variant_s, const std::string& mode_s, double seconds) {
    const RunConfig run = resolve_config(c);
    std::vector<Variant> vs;
    if (variant_s == "all") {
        vs = all_variants();
    } else {
        const auto v = parse_variant(variant_s);
        require(v.has_value(), ErrorKind::config, "unknown variant '" + variant_s + "'");
        vs.push_back(*v);
    }
    std::vector<CostMode> modes;
    if (mode_s == "recompute" || mode_s == "both") modes.push_back(CostMode::recompute);
    if (mode_s == "kv-reuse" || mode_s == "both") modes.push_back(CostMode::kv_reuse);
    std::vector<FlopReport> reports;
    for (CostMode m : modes)
        for (Variant v : vs) reports.push_back(flops_count(v, run.model, run.codec, seconds, m));
    const fs::path dir = run_dir(c, "flops-" + variant_s + "-" + mode_s, run, {});
    std::ostringstream csv;
    write_flops_csv(csv, reports);
    write_file(dir / "flops.csv", csv.str());
    print_flops_table(std::cout, reports);
    std::cout << (dir / "flops.csv").string() << '\n';
    return 0;
}

int cmd_codec_fidelity(const Common& c, const std::string& model_path, const std::string& dataset_path) {
    const LoadedModel lm = load_model(model_path);
    const Dataset ds = load_dataset(dataset_path);
    const bool own = uses_encoder_copy(lm.model.variant);
    const FidelityDelta d = own ? codec_fidelity_delta(lm.model.params, "enc.", lm.codec, cleans(ds.test))
                                : codec_fidelity_delta(lm.codec.params(), "enc.", lm.codec, cleans(ds.test));
    const fs::path dir = run_dir(c, "fidelity-" + std::string(variant_name(lm.model.variant)), lm.run,
                                 {model_path, dataset_path});
    std::ostringstream csv;
    csv << "id,delta_si_sdr_db,delta_lsd_db\n" << std::setprecision(10);
    for (std::size_t i = 0; i < d.per_utterance_delta_si_sdr.size(); ++i)
        csv << "utt" << i << ',' << d.per_utterance_delta_si_sdr[i] << ',' << d.per_utterance_delta_lsd[i] << '\n';
    csv << "mean," << d.delta_si_sdr_db << ',' << d.delta_lsd_db << '\n';
    write_file(dir / "fidelity.csv", csv.str());
    std::cout << variant_name(lm.model.variant) << ": reference SI-SDR " << d.reference_si_sdr_db
              << " dB, candidate " << d.candidate_si_sdr_db << " dB, delta SI-SDR " << d.delta_si_sdr_db
              << " dB, delta LSD " << d.delta_lsd_db << " dB\n"
              << (dir / "fidelity.csv").string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Speech enhancement in the latent space of a toy neural audio codec"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    Common mk, cp, st, en, ev, bf, cf;
    bool wav = false;
    auto* make = app.add_subcommand("make-dataset", "synthesise paired noisy/clean utterances");
    add_common(make, mk, true);
    make->add_flag("--wav", wav, "also export WAV files");

    auto* codec = app.add_subcommand("codec-pretrain", "train the toy codec on clean signals");
    add_common(codec, cp, true);

    std::string variant, codec_path, dataset_path, model_path, in, out, mode = "recompute";
    bool resume = false;
    double seconds = 1.0;
    auto* train_cmd = app.add_subcommand("se-train", "train an enhancement variant");
    add_common(train_cmd, st, true);
    train_cmd->add_option("--variant", variant, "d-ar, d-nar, d-nar-star, c-ar, c-nar, c-ft, d-ft or c-nar-ft")
        ->required();
    train_cmd->add_option("--codec", codec_path, "codec checkpoint")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--dataset", dataset_path, "dataset file")->required()->check(CLI::ExistingFile);
    train_cmd->add_flag("--resume", resume, "continue from last.ckpt in the run directory");

    auto* enh = app.add_subcommand("enhance", "enhance one WAV file");
    add_common(enh, en, false);
    enh->add_option("--model", model_path, "model checkpoint")->required()->check(CLI::ExistingFile);
    enh->add_option("--in", in, "noisy PCM16 mono WAV")->required()->check(CLI::ExistingFile);
    enh->add_option("--out", out, "output WAV")->required();

    std::string eval_model, eval_data, eval_mode = "recompute";
    auto* eval = app.add_subcommand("eval", "score a model on the test split");
    add_common(eval, ev, false);
    eval->add_option("--model", eval_model, "model checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--dataset", eval_data, "dataset file")->required()->check(CLI::ExistingFile);
    eval->add_option("--flops-mode", eval_mode, "recompute or kv-reuse")
        ->check(CLI::IsMember({"recompute", "kv-reuse"}))
        ->capture_default_str();

    std::string bench_variant = "all";
    auto* bench = app.add_subcommand("bench-flops", "analytic inference cost per variant");
    add_common(bench, bf, true);
    bench->add_option("--variant", bench_variant, "variant name or 'all'")->capture_default_str();
    bench->add_option("--mode", mode, "recompute, kv-reuse or both")
        ->check(CLI::IsMember({"recompute", "kv-reuse", "both"}))
        ->capture_default_str();
    bench->add_option("--seconds", seconds, "audio duration")->check(CLI::PositiveNumber)->capture_default_str();

    std::string fid_model, fid_data;
    auto* fid = app.add_subcommand("codec-fidelity", "clean-speech fidelity of a model's encoder vs the reference codec");
    add_common(fid, cf, false);
    fid->add_option("--model", fid_model, "model checkpoint")->required()->check(CLI::ExistingFile);
    fid->add_option("--dataset", fid_data, "dataset file (clean test signals are used)")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*make) return cmd_make_dataset(mk, wav);
        if (*codec) return cmd_codec_pretrain(cp);
        if (*train_cmd) return cmd_se_train(st, variant, codec_path, dataset_path, resume);
        if (*enh) {
            if (!en.config.empty()) resolve_config(en);
            return cmd_enhance(model_path, in, out);
        }
        if (*eval) {
            if (!ev.config.empty()) resolve_config(ev);
            return cmd_eval(ev, eval_model, eval_data, eval_mode);
        }
        if (*bench) return cmd_bench_flops(bf, bench_variant, mode, seconds);
        if (*fid) {
            if (!cf.config.empty()) resolve_config(cf);
            return cmd_codec_fidelity(cf, fid_model, fid_data);
        }
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }
    return 2;
}
