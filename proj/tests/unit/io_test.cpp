#include "doctest.h"

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "lse/checkpoint.hpp"
#include "lse/config.hpp"
#include "lse/errors.hpp"
#include "lse/wav.hpp"
#include "testing.hpp"

using namespace lse;
using namespace lse::testing;

namespace {

// 8 kHz mono PCM16 with samples 0, 1, -1, 32767, -32768, 16384, -16384, 100.
const std::vector<std::uint8_t> kGolden = {
    'R', 'I', 'F', 'F', 52, 0, 0, 0, 'W', 'A', 'V', 'E',
    'f', 'm', 't', ' ', 16, 0, 0, 0, 1, 0, 1, 0,
    0x40, 0x1F, 0, 0, 0x80, 0x3E, 0, 0, 2, 0, 16, 0,
    'd', 'a', 't', 'a', 16, 0, 0, 0,
    0x00, 0x00, 0x01, 0x00, 0xFF, 0xFF, 0xFF, 0x7F,
    0x00, 0x80, 0x00, 0x40, 0x00, 0xC0, 0x64, 0x00,
};

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no error raised");
    return ErrorKind::usage;
}

}  // namespace

TEST_CASE("golden wav decodes to the documented values") {
    const Waveform w = parse_wav(kGolden);
    CHECK(w.sample_rate == 8000);
    const std::vector<double> expect{0.0, 1 / 32768.0, -1 / 32768.0, 32767 / 32768.0, -1.0, 0.5, -0.5, 100 / 32768.0};
    CHECK(w.samples == expect);
    CHECK(encode_wav(w) == kGolden);
}

TEST_CASE("wav writer clamps and round-trips within one step") {
    CHECK(encode_wav(Waveform{{1.0}, 8000})[44] == 0xFF);
    CHECK(encode_wav(Waveform{{1.0}, 8000})[45] == 0x7F);
    const auto zeros = encode_wav(Waveform{std::vector<double>(5, 0.0), 16000});
    CHECK(zeros.size() == 44 + 10);
    for (std::size_t i = 44; i < zeros.size(); ++i) CHECK(zeros[i] == 0);
    Rng rng(91);
    const Waveform w = random_wave(rng, 300, 0.3);
    const auto path = std::filesystem::temp_directory_path() / "lse_unit_roundtrip.wav";
    write_wav(path, w);
    const Waveform back = read_wav(path);
    CHECK(back.sample_rate == 8000);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(back.samples[i] - std::clamp(w.samples[i], -1.0, 1.0)) <= 1.0 / 32768);
    std::filesystem::remove(path);
}

TEST_CASE("malformed and unsupported wav files are rejected") {
    auto trunc = kGolden;
    trunc.resize(50);
    CHECK(kind_of([&] { parse_wav(trunc); }) == ErrorKind::data);
    auto bad = kGolden;
    bad[0] = 'X';
    CHECK(kind_of([&] { parse_wav(bad); }) == ErrorKind::data);
    auto stereo = kGolden;
    stereo[22] = 2;
    CHECK(kind_of([&] { parse_wav(stereo); }) == ErrorKind::unsupported_format);
    auto flt = kGolden;
    flt[20] = 3;
    CHECK(kind_of([&] { parse_wav(flt); }) == ErrorKind::unsupported_format);
    auto deep = kGolden;
    deep[34] = 24;
    CHECK(kind_of([&] { parse_wav(deep); }) == ErrorKind::unsupported_format);
    CHECK(kind_of([&] { read_wav("/nonexistent/x.wav"); }) == ErrorKind::io);
}

TEST_CASE("config parsing rejects unknown keys and bad versions") {
    CHECK_NOTHROW(parse_config(R"({"schema_version": 1})"));
    CHECK(kind_of([] { parse_config(R"({"schema_version": 1, "sede": 3})"); }) == ErrorKind::config);
    CHECK(kind_of([] { parse_config(R"({"schema_version": 1, "train": {"lr": 3}})"); }) == ErrorKind::config);
    CHECK(kind_of([] { parse_config(R"({"schema_version": 2})"); }) == ErrorKind::config);
    CHECK(kind_of([] { parse_config(R"({"schema_version": 1, "train": {"epochs": 0}})"); }) == ErrorKind::config);
    CHECK(kind_of([] { parse_config("{"); }) == ErrorKind::config);
}

TEST_CASE("config serialisation is canonical") {
    const RunConfig a = load_config(LSE_CONFIG_DIR "/desk.json");
    const RunConfig b = parse_config(a.to_json());
    CHECK(a.to_json() == b.to_json());
    CHECK(a.hash() == b.hash());
    CHECK(a.codec.downsample_factor() == 64);
    RunConfig c = a;
    c.seed += 1;
    CHECK(c.hash() != a.hash());
}

TEST_CASE("variant names round-trip") {
    for (Variant v : all_variants()) CHECK(parse_variant(variant_name(v)) == v);
    CHECK_FALSE(parse_variant("c-nar-star").has_value());
    CHECK(all_variants().size() == 8);
}

TEST_CASE("checkpoint container round-trips and rejects corruption") {
    Checkpoint ck;
    ck.config = R"({"kind":"test"})";
    ck.add("a", Tensor(2, 3, {1, 2, 3, 4, 5, 6.5}));
    ck.add("b", Tensor(1, 2, {0.1, 0.2}), DType::f32);
    const auto bytes = serialize(ck);
    const Checkpoint back = deserialize(bytes);
    CHECK(back.config == ck.config);
    CHECK(back.at("a") == ck.at("a"));
    CHECK(back.at("b")[0] == static_cast<double>(0.1f));
    CHECK(back.find("c") == nullptr);
    auto cut = bytes;
    cut.resize(cut.size() - 3);
    CHECK(kind_of([&] { deserialize(cut); }) == ErrorKind::data);
    auto magic = bytes;
    magic[0] = 'X';
    CHECK(kind_of([&] { deserialize(magic); }) == ErrorKind::data);
}
