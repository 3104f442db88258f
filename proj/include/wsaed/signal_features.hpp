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

// Log mel filter bank energies (LFBE) from mono PCM.
//
// Framing: window = floor(win_s * sr), hop = floor(hop_s * sr), periodic
// Hann window, FFT size = next power of two >= window. Filters are triangular
// with unit peak on the HTK mel scale, spaced evenly from 0 Hz to Nyquist.

#pragma once

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "wsaed/error.hpp"
#include "wsaed/tensor.hpp"

namespace wsaed {

struct AudioClip {
  std::vector<float> samples;
  int sample_rate = 0;

  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

struct LfbeConfig {
  double win_s = 0.025;
  double hop_s = 0.010;
  std::size_t n_mels = 64;
  std::size_t n_fft = 0;  // 0 = next power of two >= window length
  double floor_epsilon = 1e-10;
  double max_duration_s = 10.0;
  // Per-utterance mean/variance normalization of every band; off by default.
  bool normalize = false;
};

// T x N log energies, row t = frame t.
struct Spectrogram {
  Tensor<float> frames;
  double frame_shift_s = 0.0;
  std::size_t n_mels = 0;

  std::size_t num_frames() const { return frames.empty() ? 0 : frames.dim(0); }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

inline std::size_t samples_for(double seconds, int sample_rate) {
  return static_cast<std::size_t>(std::floor(seconds * sample_rate + 1e-9));
}

inline std::size_t frame_count(std::size_t n_samples, std::size_t win, std::size_t hop) {
  return n_samples < win ? 0 : 1 + (n_samples - win) / hop;
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

// Hann-windowed frames as a [T, window] tensor.
inline Tensor<float> frame_signal(const AudioClip& clip, double win_s, double hop_s) {
  WSAED_CHECK(clip.sample_rate > 0, "sample rate must be positive");
  WSAED_CHECK(!clip.samples.empty(), "clip is empty");
  WSAED_CHECK(hop_s > 0.0 && win_s >= hop_s, "need win_s >= hop_s > 0");
  const std::size_t win = samples_for(win_s, clip.sample_rate);
  const std::size_t hop = samples_for(hop_s, clip.sample_rate);
  WSAED_CHECK(win > 0 && hop > 0, "window or hop shorter than one sample");
  WSAED_CHECK(clip.samples.size() >= win, "clip too short: ", clip.samples.size(),
              " samples, window needs ", win);
  const std::size_t T = frame_count(clip.samples.size(), win, hop);
  const auto window = hann_window(win);
  Tensor<float> frames({T, win});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < win; ++i)
      frames.at(t, i) = static_cast<float>(clip.samples[t * hop + i] * window[i]);
  return frames;
}

// [n_mels, n_fft/2 + 1] triangular filters with unit peak.
inline Tensor<double> mel_filterbank(std::size_t n_mels, std::size_t n_fft, int sample_rate) {
  WSAED_CHECK(n_mels >= 1, "n_mels must be >= 1");
  const std::size_t bins = n_fft / 2 + 1;
  const double nyquist = sample_rate / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  Tensor<double> fb({n_mels, bins});
  for (std::size_t j = 0; j < n_mels; ++j) {
    const double lo = edges[j], mid = edges[j + 1], hi = edges[j + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      double w = 0.0;
      if (f >= lo && f <= mid && mid > lo) w = (f - lo) / (mid - lo);
      else if (f > mid && f <= hi && hi > mid) w = (hi - f) / (hi - mid);
      fb.at(j, k) = w;
    }
  }
  return fb;
}

inline double mel_center_hz(std::size_t band, std::size_t n_mels, int sample_rate) {
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  return mel_to_hz(mel_max * static_cast<double>(band + 1) / static_cast<double>(n_mels + 1));
}

// Holds the window and filterbank for one (sample rate, config) pair.
// Immutable after construction.
class LfbeExtractor {
 public:
  LfbeExtractor(int sample_rate, LfbeConfig config = {}) : config_(config), sample_rate_(sample_rate) {
    WSAED_CHECK(sample_rate > 0, "sample rate must be positive");
    win_ = samples_for(config_.win_s, sample_rate);
    hop_ = samples_for(config_.hop_s, sample_rate);
    WSAED_CHECK(win_ > 0 && hop_ > 0 && win_ >= hop_, "invalid window/hop");
    n_fft_ = config_.n_fft == 0 ? next_pow2(win_) : config_.n_fft;
    WSAED_CHECK(n_fft_ >= win_, "n_fft (", n_fft_, ") shorter than window (", win_, ")");
    filters_ = mel_filterbank(config_.n_mels, n_fft_, sample_rate);
  }

  std::size_t window_length() const { return win_; }
  std::size_t hop_length() const { return hop_; }
  std::size_t fft_size() const { return n_fft_; }
  const LfbeConfig& config() const { return config_; }

  Spectrogram operator()(const AudioClip& clip) const {
    WSAED_CHECK(clip.sample_rate == sample_rate_, "extractor built for ", sample_rate_,
                " Hz, clip is ", clip.sample_rate, " Hz");
    WSAED_CHECK(clip.duration_s() <= config_.max_duration_s + 1e-9, "clip duration ",
                clip.duration_s(), " s exceeds the configured maximum ", config_.max_duration_s, " s");
    const Tensor<float> frames = frame_signal(clip, config_.win_s, config_.hop_s);
    const std::size_t T = frames.dim(0), N = config_.n_mels, bins = n_fft_ / 2 + 1;
    const double log_floor = std::log(config_.floor_epsilon);

    Spectrogram spec;
    spec.frames = Tensor<float>({T, N});
    spec.frame_shift_s = static_cast<double>(hop_) / sample_rate_;
    spec.n_mels = N;

    Eigen::FFT<double> fft;
    std::vector<double> buf(n_fft_, 0.0);
    std::vector<std::complex<double>> spectrum;
    std::vector<double> power(bins);
    for (std::size_t t = 0; t < T; ++t) {
      std::fill(buf.begin(), buf.end(), 0.0);
      for (std::size_t i = 0; i < win_; ++i) buf[i] = frames.at(t, i);
      fft.fwd(spectrum, buf);
      for (std::size_t k = 0; k < bins; ++k) power[k] = std::norm(spectrum[k]);
      for (std::size_t j = 0; j < N; ++j) {
        double e = 0.0;
        const double* w = filters_.data() + j * bins;
        for (std::size_t k = 0; k < bins; ++k) e += w[k] * power[k];
        spec.frames.at(t, j) =
            static_cast<float>(e > config_.floor_epsilon ? std::log(e) : log_floor);
      }
    }
    if (config_.normalize) normalize_bands(spec);
    return spec;
  }

 private:
  static void normalize_bands(Spectrogram& spec) {
    const std::size_t T = spec.num_frames(), N = spec.n_mels;
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0.0, ss = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        s += spec.frames.at(t, j);
        ss += static_cast<double>(spec.frames.at(t, j)) * spec.frames.at(t, j);
      }
      const double m = s / T;
      const double sd = std::sqrt(std::max(ss / T - m * m, 0.0)) + 1e-8;
      for (std::size_t t = 0; t < T; ++t)
        spec.frames.at(t, j) = static_cast<float>((spec.frames.at(t, j) - m) / sd);
    }
  }

  LfbeConfig config_;
  int sample_rate_;
  std::size_t win_ = 0, hop_ = 0, n_fft_ = 0;
  Tensor<double> filters_;
};

inline Spectrogram lfbe(const AudioClip& clip, const LfbeConfig& config = {}) {
  return LfbeExtractor(clip.sample_rate, config)(clip);
}

}  // namespace wsaed
