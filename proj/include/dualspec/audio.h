#pragma once

#include <string>

#include "dualspec/dsp.h"

namespace dualspec::audio {

enum class SampleFormat { kPcm16, kFloat32 };

struct WavInfo {
  SampleFormat format = SampleFormat::kPcm16;
  int sample_rate = 16000;
  int channels = 1;
};

inline constexpr int kDefaultSampleRate = 16000;

// Mono RIFF/WAVE, 16-bit PCM or 32-bit float. PCM16 is scaled by 1/32768.
// expected_rate <= 0 skips the rate check. Throws IoError with the cause.
dsp::Waveform read_wav(const std::string& path, int expected_rate = kDefaultSampleRate,
                       WavInfo* info = nullptr);

// Writes via a temporary file renamed into place. PCM16 rounds and clamps to
// [-32768, 32767].
void write_wav(const std::string& path, const dsp::Waveform& wave,
               SampleFormat format = SampleFormat::kFloat32);

}  // namespace dualspec::audio
