#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <algorithm>
#include <iterator>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "zsa/core/binary_io.hpp"
#include "zsa/core/error.hpp"

namespace zsa::dsp {

struct Waveform {
  std::vector<float> samples;
  int sample_rate = 0;

  void validate() const {
    require_data(!samples.empty(), "waveform is empty");
    require_data(sample_rate > 0, "waveform sample rate must be positive");
    for (float s : samples)
      if (!std::isfinite(s)) throw DataError("waveform contains non-finite samples");
  }
};

namespace detail {
inline std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
}  // namespace detail

// Reads a RIFF/WAVE PCM16 mono file. When `expected_rate` is given, a file at
// any other rate is rejected; nothing is ever resampled.
inline Waveform load_wav(const std::filesystem::path& path,
                         std::optional<int> expected_rate = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open wav file " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto where = " (" + path.string() + ")";
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw DataError("malformed wav header: missing RIFF/WAVE tags" + where);

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* chunk = buf.data() + pos;
    const std::uint32_t len = detail::le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > buf.size()) throw DataError("malformed wav header: chunk overruns file" + where);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw DataError("malformed wav header: short fmt chunk" + where);
      format = detail::le16(buf.data() + body);
      channels = detail::le16(buf.data() + body + 2);
      rate = detail::le32(buf.data() + body + 4);
      bits = detail::le16(buf.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = buf.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1u);
  }
  if (!have_fmt) throw DataError("malformed wav header: no fmt chunk" + where);
  if (!data) throw DataError("malformed wav header: no data chunk" + where);
  if (format != 1 || bits != 16)
    throw DataError("unsupported wav encoding (format " + std::to_string(format) + ", " +
                    std::to_string(bits) + " bits); expected PCM16" + where);
  if (channels != 1)
    throw DataError("unsupported channel count " + std::to_string(channels) + "; expected mono" + where);
  if (rate == 0) throw DataError("malformed wav header: zero sample rate" + where);
  if (expected_rate && static_cast<int>(rate) != *expected_rate)
    throw DataError("sample rate mismatch: file has " + std::to_string(rate) + " Hz, configured " +
                    std::to_string(*expected_rate) + " Hz" + where);

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(data_len / 2);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const auto v = static_cast<std::int16_t>(detail::le16(data + 2 * i));
    w.samples[i] = static_cast<float>(v) / 32768.0f;
  }
  return w;
}

// Writes PCM16 mono; samples are clipped to the representable range.
inline void save_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write wav file " + path.string());
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  auto u16 = [&](std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    out.write(b, 2);
  };
  out.write("RIFF", 4);
  io::write_u32(out, 36 + 2 * n);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  io::write_u32(out, 16);
  u16(1);
  u16(1);
  io::write_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  io::write_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  u16(2);
  u16(16);
  out.write("data", 4);
  io::write_u32(out, 2 * n);
  for (float s : w.samples) {
    const double q = std::round(static_cast<double>(s) * 32768.0);
    const auto v = static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0));
    u16(static_cast<std::uint16_t>(v));
  }
  if (!out) throw DataError("failed writing wav file " + path.string());
}

}  // namespace zsa::dsp
