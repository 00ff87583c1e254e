#pragma once

// PCM16 mono RIFF/WAVE reading and writing.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lse/rvq.hpp"

namespace lse {

// Anything other than 16-bit integer PCM mono is rejected with an
// unsupported-format error naming the field; malformed or truncated files
// raise data errors.
Waveform read_wav(const std::filesystem::path& path);
Waveform parse_wav(const std::vector<std::uint8_t>& bytes);

// Samples are clamped to [-1, 1) and scaled by 32768 (rounded to nearest).
void write_wav(const std::filesystem::path& path, const Waveform& wav);
std::vector<std::uint8_t> encode_wav(const Waveform& wav);

}  // namespace lse
