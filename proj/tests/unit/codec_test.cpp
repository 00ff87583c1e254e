#include "doctest.h"

#include <cmath>

#include "lse/codec.hpp"
#include "lse/errors.hpp"
#include "testing.hpp"

using namespace lse;
using namespace lse::testing;

TEST_CASE("encoder truncates partial frames and decoder restores whole frames") {
    const Codec codec(RunConfig{}.codec, 101);
    Rng rng(101);
    const Waveform w = random_wave(rng, 64 * 5 + 17);
    const LatentSeq z = encode(w, codec);
    CHECK(z.num_frames() == 5);
    CHECK(z.latent_dim() == 16);
    CHECK(decode(z, codec).size() == 5 * 64);
    CHECK(codec.frames_for(8000) == 125);
    CHECK_THROWS_AS(encode(random_wave(rng, 63), codec), Error);
    Waveform bad = random_wave(rng, 128);
    bad.samples[3] = NAN;
    CHECK_THROWS_AS(encode(bad, codec), Error);
    CHECK_THROWS_AS(decode(LatentSeq{Tensor(3, 15)}, codec), Error);
}

TEST_CASE("16 kHz config with a 320-sample hop gives 50 frames per second") {
    CodecConfig c;
    c.sample_rate = 16000;
    c.strides = {2, 4, 5, 8};
    CHECK(c.downsample_factor() == 320);
    const Codec codec(c, 1);
    CHECK(codec.frames_for(16000) == 50);
}

TEST_CASE("zero in, zero out with zero biases") {
    const Codec codec(tiny_codec_config(), 102);
    CHECK(encode(Waveform{std::vector<double>(40, 0.0), 8000}, codec).values.max_abs() == 0.0);
    CHECK(decode(LatentSeq{Tensor(6, 4)}, codec).samples == std::vector<double>(24, 0.0));
}

TEST_CASE("encode and decode are deterministic") {
    const Codec codec(tiny_codec_config(), 103);
    Rng rng(103);
    const Waveform w = random_wave(rng, 48);
    CHECK(encode(w, codec).values == encode(w, codec).values);
    CHECK(reconstruct(w, codec).samples == reconstruct(w, codec).samples);
}

TEST_CASE("codec checkpoints round-trip") {
    const Codec codec(tiny_codec_config(), 104);
    Checkpoint ck;
    codec.save(ck);
    const Codec back = Codec::load(ck, codec.config());
    Rng rng(104);
    const Waveform w = random_wave(rng, 40);
    CHECK(reconstruct(w, back).samples == reconstruct(w, codec).samples);
}

TEST_CASE("short pretraining moves parameters, keeps the zero codeword and matches the golden latent") {
    CodecConfig cfg = tiny_codec_config();
    CodecTrainConfig tc;
    tc.utterances = 8;
    tc.epochs = 3;
    tc.warmup_epochs = 1;
    tc.segment_seconds = 0.016;
    tc.batch_size = 2;
    tc.fft_sizes = {16, 32};
    const auto clean = make_clean_set(8, 8000, 0.064, 105);
    const Codec init(cfg, 105);
    CodecTrainReport rep;
    const Codec c = pretrain_codec(clean, cfg, tc, 105, &rep);
    CHECK(rep.steps > 0);
    CHECK_FALSE(c.params().at("enc.in.w").value == init.params().at("enc.in.w").value);
    CHECK(c.codebooks().frozen);
    for (const auto& s : c.codebooks().stages) CHECK(Tensor(1, 4, std::vector<double>(s.row(0).begin(), s.row(0).end())).max_abs() == 0.0);
    CHECK_NOTHROW(c.codebooks().validate());
    CHECK(rep.codebook_usage.size() == 2);

    Rng rng(106);
    const LatentSeq z = encode(random_wave(rng, 64), c);
    double sum = 0, sq = 0;
    for (std::size_t i = 0; i < z.values.size(); ++i) {
        sum += z.values[i];
        sq += z.values[i] * z.values[i];
    }
    CHECK(sum == doctest::Approx(0.51726098232048556).epsilon(1e-6));
    CHECK(sq == doctest::Approx(4.2405010959600382).epsilon(1e-6));
}

TEST_CASE("pretraining rejects an empty set") {
    CHECK_THROWS_AS(pretrain_codec({}, tiny_codec_config(), CodecTrainConfig{}, 1), Error);
}
