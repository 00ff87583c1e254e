#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "lse/se_models.hpp"
#include "lse/wav.hpp"
#include "testing.hpp"

using namespace lse;
using namespace lse::testing;
namespace fs = std::filesystem;

namespace {

const std::string kCli = LSE_CLI_PATH;
const std::string kDesk = std::string(LSE_CONFIG_DIR) + "/desk.json";

int run(const std::string& args) {
    const int st = std::system((kCli + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

fs::path fresh(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("lse_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path find_file(const fs::path& root, const std::string& name) {
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.path().filename() == name) return e.path();
    return {};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("cli usage errors exit with 2") {
    const fs::path d = fresh("usage");
    CHECK(run("") == 2);
    CHECK(run("no-such-command") == 2);
    CHECK(run("bench-flops --config " + kDesk + " --out-dir " + d.string() + " --bogus") == 2);
    CHECK(run("bench-flops --config " + kDesk + " --out-dir " + d.string() + " --variant c-nar-star") == 2);
    CHECK(run("bench-flops --config " + kDesk + " --out-dir " + d.string() + " --jobs 0") == 2);
    std::ofstream(d / "bad.json") << R"({"schema_version": 1, "trian": {}})";
    CHECK(run("bench-flops --config " + (d / "bad.json").string() + " --out-dir " + d.string()) == 2);
}

TEST_CASE("bench-flops writes one total row per variant") {
    const fs::path d = fresh("bench");
    REQUIRE(run("bench-flops --config " + kDesk + " --variant all --mode both --out-dir " + d.string()) == 0);
    const fs::path csv = find_file(d, "flops.csv");
    REQUIRE_FALSE(csv.empty());
    const std::string s = slurp(csv);
    std::size_t totals = 0;
    for (std::size_t p = s.find(",total,"); p != std::string::npos; p = s.find(",total,", p + 1)) ++totals;
    CHECK(totals == 16);
    CHECK(fs::exists(csv.parent_path() / "config.json"));
}

TEST_CASE("enhance writes whole frames and maps data errors to 3") {
    const fs::path d = fresh("enhance");
    RunConfig cfg = load_config(kDesk);
    const Codec codec(cfg.codec, cfg.seed);
    save_model(d / "model.ckpt", make_model(Variant::c_nar, cfg.model, codec, cfg.seed), codec, cfg);
    Rng rng(111);
    write_wav(d / "noisy.wav", random_wave(rng, 64 * 10 + 5, 0.2));
    const std::string common = " --config " + kDesk + " --out-dir " + d.string() + " --model " + (d / "model.ckpt").string();
    REQUIRE(run("enhance" + common + " --in " + (d / "noisy.wav").string() + " --out " + (d / "est.wav").string()) == 0);
    CHECK(read_wav(d / "est.wav").size() == 640);

    write_wav(d / "fast.wav", Waveform{random_wave(rng, 640, 0.2).samples, 16000});
    CHECK(run("enhance" + common + " --in " + (d / "fast.wav").string() + " --out " + (d / "x.wav").string()) == 3);
    std::ofstream(d / "junk.wav") << "not a wav file at all";
    CHECK(run("enhance" + common + " --in " + (d / "junk.wav").string() + " --out " + (d / "x.wav").string()) == 3);
    std::ofstream(d / "junk.ckpt") << "garbage";
    CHECK(run("enhance --config " + kDesk + " --out-dir " + d.string() + " --model " + (d / "junk.ckpt").string() +
              " --in " + (d / "noisy.wav").string() + " --out " + (d / "x.wav").string()) == 3);
    CHECK(run("enhance" + common + " --in " + (d / "missing.wav").string() + " --out " + (d / "x.wav").string()) == 2);
}
