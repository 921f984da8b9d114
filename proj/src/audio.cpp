#include "dualspec/audio.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <vector>

#include "dualspec/error.h"

namespace dualspec::audio {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }
std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

void put16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(v & 0xFF);
  out.push_back(v >> 8);
}
void put32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}
void put_tag(std::vector<unsigned char>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

}  // namespace

dsp::Waveform read_wav(const std::string& path, int expected_rate, WavInfo* info) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw IoError(path + ": truncated RIFF header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw IoError(path + ": not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t len = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) {
      throw IoError(path + ": truncated '" + std::string(chunk, chunk + 4) + "' chunk (" +
                    std::to_string(len) + " bytes declared, " +
                    std::to_string(bytes.size() - body) + " present)");
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw IoError(path + ": fmt chunk too short");
      const unsigned char* f = bytes.data() + body;
      format = le16(f);
      channels = le16(f + 2);
      rate = le32(f + 4);
      bits = le16(f + 14);
      if (format == kFormatExtensible) {
        if (len < 40) throw IoError(path + ": extensible fmt chunk too short");
        format = le16(f + 24);  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);
  }
  if (!have_fmt) throw IoError(path + ": missing fmt chunk");
  if (data == nullptr) throw IoError(path + ": missing data chunk");
  if (channels != 1)
    throw IoError(path + ": " + std::to_string(channels) + " channels, only mono is supported");

  SampleFormat sf;
  if (format == kFormatPcm && bits == 16) {
    sf = SampleFormat::kPcm16;
  } else if (format == kFormatFloat && bits == 32) {
    sf = SampleFormat::kFloat32;
  } else {
    throw IoError(path + ": unsupported encoding (format tag " + std::to_string(format) + ", " +
                  std::to_string(bits) + " bits); need 16-bit PCM or 32-bit float");
  }
  if (expected_rate > 0 && int(rate) != expected_rate)
    throw IoError(path + ": sample rate " + std::to_string(rate) + " Hz, expected " +
                  std::to_string(expected_rate) + " Hz (resampling is not supported)");

  const std::size_t width = bits / 8;
  if (data_len % width != 0) throw IoError(path + ": data chunk is not a whole number of samples");
  const std::size_t n = data_len / width;
  dsp::Waveform w;
  w.sample_rate = int(rate);
  w.samples.resize(Eigen::Index(n));
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* p = data + i * width;
    if (sf == SampleFormat::kPcm16) {
      w.samples(Eigen::Index(i)) = double(std::int16_t(le16(p))) / 32768.0;
    } else {
      const std::uint32_t u = le32(p);
      float f;
      std::memcpy(&f, &u, sizeof f);
      w.samples(Eigen::Index(i)) = f;
    }
  }
  if (info != nullptr) *info = {sf, int(rate), int(channels)};
  return w;
}

void write_wav(const std::string& path, const dsp::Waveform& wave, SampleFormat format) {
  if (wave.sample_rate <= 0) throw IoError(path + ": invalid sample rate");
  const std::uint16_t bits = format == SampleFormat::kPcm16 ? 16 : 32;
  const std::uint32_t data_len = std::uint32_t(wave.size()) * (bits / 8);
  std::vector<unsigned char> out;
  out.reserve(44 + data_len);
  put_tag(out, "RIFF");
  put32(out, 36 + data_len);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put32(out, 16);
  put16(out, format == SampleFormat::kPcm16 ? kFormatPcm : kFormatFloat);
  put16(out, 1);
  put32(out, std::uint32_t(wave.sample_rate));
  put32(out, std::uint32_t(wave.sample_rate) * (bits / 8));
  put16(out, bits / 8);
  put16(out, bits);
  put_tag(out, "data");
  put32(out, data_len);
  for (Eigen::Index i = 0; i < wave.size(); ++i) {
    if (format == SampleFormat::kPcm16) {
      const double v = std::clamp(std::round(wave.samples(i) * 32768.0), -32768.0, 32767.0);
      put16(out, std::uint16_t(std::int16_t(v)));
    } else {
      const float f = float(wave.samples(i));
      std::uint32_t u;
      std::memcpy(&u, &f, sizeof u);
      put32(out, u);
    }
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(path + ": cannot open for writing");
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) {
      std::filesystem::remove(tmp);
      throw IoError(path + ": write failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError(path + ": rename failed: " + ec.message());
  }
}

}  // namespace dualspec::audio
