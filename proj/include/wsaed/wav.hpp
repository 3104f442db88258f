// Copyright 2026 The wsaed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Mono RIFF/WAVE in 16-bit PCM or 32-bit IEEE float. Unknown chunks are
// skipped; multi-channel files are rejected.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "wsaed/error.hpp"
#include "wsaed/signal_features.hpp"

namespace wsaed {

static_assert(std::endian::native == std::endian::little, "WAV and archive I/O assume a little-endian host");

enum class SampleFormat { kPcm16, kFloat32 };

namespace detail {

template <typename T>
T read_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  WSAED_CHECK(in, "cannot open '", path.string(), "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes to a sibling temp file and renames, so readers never see a
// half-written artifact.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline AudioClip decode_wav(const std::vector<unsigned char>& b, const std::string& what = "wav data") {
  using detail::read_le;
  WSAED_CHECK(b.size() >= 12 && std::memcmp(b.data(), "RIFF", 4) == 0 && std::memcmp(b.data() + 8, "WAVE", 4) == 0,
              what, ": not a RIFF/WAVE file");
  std::size_t pos = 12;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= b.size()) {
    const std::string id(reinterpret_cast<const char*>(b.data() + pos), 4);
    const std::uint32_t size = read_le<std::uint32_t>(b.data() + pos + 4);
    const std::size_t body = pos + 8;
    WSAED_CHECK(body + size <= b.size(), what, ": chunk '", id, "' runs past end of file");
    if (id == "fmt ") {
      WSAED_CHECK(size >= 16, what, ": fmt chunk too small");
      format = read_le<std::uint16_t>(b.data() + body);
      channels = read_le<std::uint16_t>(b.data() + body + 2);
      rate = read_le<std::uint32_t>(b.data() + body + 4);
      bits = read_le<std::uint16_t>(b.data() + body + 14);
      if (format == 0xFFFE && size >= 26) format = read_le<std::uint16_t>(b.data() + body + 24);
      have_fmt = true;
    } else if (id == "data") {
      WSAED_CHECK(have_fmt, what, ": data chunk before fmt chunk");
      WSAED_CHECK(channels == 1, what, ": expected mono audio, got ", channels, " channels");
      AudioClip clip{{}, static_cast<int>(rate)};
      const unsigned char* p = b.data() + body;
      if (format == 1 && bits == 16) {
        clip.samples.resize(size / 2);
        for (std::size_t i = 0; i < clip.samples.size(); ++i)
          clip.samples[i] = static_cast<float>(read_le<std::int16_t>(p + 2 * i)) / 32768.0f;
      } else if (format == 3 && bits == 32) {
        clip.samples.resize(size / 4);
        for (std::size_t i = 0; i < clip.samples.size(); ++i) clip.samples[i] = read_le<float>(p + 4 * i);
      } else {
        throw ValidationError(what + ": unsupported sample format (tag " + std::to_string(format) + ", " +
                              std::to_string(bits) + " bits); expected 16-bit PCM or 32-bit float");
      }
      WSAED_CHECK(rate > 0, what, ": zero sample rate");
      return clip;
    }
    pos = body + size + (size & 1);
  }
  throw ValidationError(what + ": no data chunk");
}

inline AudioClip read_wav(const std::filesystem::path& path) {
  return decode_wav(detail::read_file(path), path.string());
}

inline std::string encode_wav(const AudioClip& clip, SampleFormat fmt = SampleFormat::kFloat32) {
  using detail::put_le;
  const bool pcm = fmt == SampleFormat::kPcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * bits / 8);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_le<std::uint32_t>(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, pcm ? 1 : 3);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate) * bits / 8);
  put_le<std::uint16_t>(out, bits / 8);
  put_le<std::uint16_t>(out, bits);
  out += "data";
  put_le<std::uint32_t>(out, data_bytes);
  for (float s : clip.samples) {
    if (pcm) {
      const float c = std::clamp(s, -1.0f, 1.0f);
      put_le<std::int16_t>(out, static_cast<std::int16_t>(std::lrint(std::min(c * 32768.0f, 32767.0f))));
    } else {
      put_le<float>(out, s);
    }
  }
  return out;
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip,
                      SampleFormat fmt = SampleFormat::kFloat32) {
  detail::write_file_atomic(path, encode_wav(clip, fmt));
}

}  // namespace wsaed
