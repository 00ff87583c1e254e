#include "lse/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "lse/errors.hpp"

namespace lse {

namespace {

std::uint32_t u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
std::uint16_t u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void put32(std::vector<std::uint8_t>& o, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) o.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put16(std::vector<std::uint8_t>& o, std::uint16_t v) {
    o.push_back(static_cast<std::uint8_t>(v));
    o.push_back(static_cast<std::uint8_t>(v >> 8));
}

}  // namespace

Waveform parse_wav(const std::vector<std::uint8_t>& b) {
    require(b.size() >= 12, ErrorKind::data, "wav: file shorter than the RIFF header");
    require(std::memcmp(b.data(), "RIFF", 4) == 0, ErrorKind::data, "wav: missing RIFF tag");
    require(std::memcmp(b.data() + 8, "WAVE", 4) == 0, ErrorKind::data, "wav: missing WAVE tag");
    const std::uint32_t riff_size = u32(b.data() + 4);
    require(static_cast<std::uint64_t>(riff_size) + 8 <= b.size(), ErrorKind::data,
            "wav: RIFF size " + std::to_string(riff_size) + " exceeds file size " + std::to_string(b.size()));

    bool have_fmt = false;
    int rate = 0;
    std::size_t pos = 12;
    while (pos + 8 <= b.size()) {
        const std::uint32_t size = u32(b.data() + pos + 4);
        const std::size_t body = pos + 8;
        require(body + size <= b.size(), ErrorKind::data, "wav: chunk extends past end of file");
        if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
            require(size >= 16, ErrorKind::data, "wav: fmt chunk too short");
            const std::uint16_t format = u16(b.data() + body);
            const std::uint16_t channels = u16(b.data() + body + 2);
            const std::uint32_t sr = u32(b.data() + body + 4);
            const std::uint16_t block_align = u16(b.data() + body + 12);
            const std::uint16_t bits = u16(b.data() + body + 14);
            require(format == 1, ErrorKind::unsupported_format,
                    "wav: audio_format " + std::to_string(format) + " (only PCM = 1 is supported)");
            require(channels == 1, ErrorKind::unsupported_format,
                    "wav: num_channels " + std::to_string(channels) + " (only mono is supported)");
            require(bits == 16, ErrorKind::unsupported_format,
                    "wav: bits_per_sample " + std::to_string(bits) + " (only 16 is supported)");
            require(block_align == 2, ErrorKind::data, "wav: block_align inconsistent with PCM16 mono");
            require(sr > 0 && sr <= 1000000, ErrorKind::data, "wav: sample_rate " + std::to_string(sr));
            require(u32(b.data() + body + 8) == sr * 2, ErrorKind::data, "wav: byte_rate inconsistent");
            rate = static_cast<int>(sr);
            have_fmt = true;
        } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
            require(have_fmt, ErrorKind::data, "wav: data chunk before fmt chunk");
            require(size % 2 == 0, ErrorKind::data, "wav: odd data size for PCM16");
            Waveform w{std::vector<double>(size / 2), rate};
            for (std::size_t i = 0; i < w.samples.size(); ++i) {
                const auto s = static_cast<std::int16_t>(u16(b.data() + body + 2 * i));
                w.samples[i] = static_cast<double>(s) / 32768.0;
            }
            require(!w.samples.empty(), ErrorKind::length, "wav: no samples");
            return w;
        }
        pos = body + size + (size & 1u);
    }
    fail(ErrorKind::data, have_fmt ? "wav: missing data chunk" : "wav: missing fmt chunk");
}

Waveform read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return parse_wav(bytes);
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_wav(const Waveform& wav) {
    require(wav.sample_rate > 0, ErrorKind::data, "wav: sample rate must be positive");
    const std::size_t n = wav.size();
    require(n * 2 + 36 <= 0xFFFFFFFFu, ErrorKind::length, "wav: too many samples");
    std::vector<std::uint8_t> o;
    o.reserve(44 + 2 * n);
    o.insert(o.end(), {'R', 'I', 'F', 'F'});
    put32(o, static_cast<std::uint32_t>(36 + 2 * n));
    o.insert(o.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put32(o, 16);
    put16(o, 1);
    put16(o, 1);
    put32(o, static_cast<std::uint32_t>(wav.sample_rate));
    put32(o, static_cast<std::uint32_t>(wav.sample_rate) * 2);
    put16(o, 2);
    put16(o, 16);
    o.insert(o.end(), {'d', 'a', 't', 'a'});
    put32(o, static_cast<std::uint32_t>(2 * n));
    for (std::size_t i = 0; i < n; ++i) {
        const double x = wav.samples[i];
        require(std::isfinite(x), ErrorKind::data, "wav: sample " + std::to_string(i) + " is not finite");
        const double q = std::nearbyint(std::clamp(x, -1.0, 32767.0 / 32768.0) * 32768.0);
        put16(o, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
    return o;
}

void write_wav(const std::filesystem::path& path, const Waveform& wav) {
    const auto bytes = encode_wav(wav);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::io, "write failed: " + path.string());
}

}  // namespace lse
