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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "wsaed/signal_features.hpp"

namespace wsaed {
namespace {

// Counts frames by sliding a window start until it no longer fits.
std::size_t naive_frame_count(std::size_t n, std::size_t win, std::size_t hop) {
  std::size_t count = 0;
  for (std::size_t start = 0; start + win <= n; start += hop) ++count;
  return count;
}

AudioClip noise_clip(std::size_t n, int sr, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-0.5f, 0.5f);
  AudioClip clip{std::vector<float>(n), sr};
  for (auto& s : clip.samples) s = d(rng);
  return clip;
}

TEST(FrameSignal, TenSecondsAt44k) {
  EXPECT_EQ(naive_frame_count(441000, 1102, 441), 998u);
  AudioClip clip{std::vector<float>(441000, 0.0f), 44100};
  EXPECT_EQ(frame_signal(clip, 0.025, 0.010).dim(0), 998u);
  EXPECT_EQ(frame_signal(clip, 0.025, 0.010).dim(1), 1102u);
}

TEST(FrameSignal, OneWindowIsOneFrame) {
  AudioClip clip{std::vector<float>(400, 0.1f), 16000};
  EXPECT_EQ(frame_signal(clip, 0.025, 0.010).dim(0), 1u);
}

TEST(FrameSignal, TwoHopsPlusWindowIsThreeFrames) {
  AudioClip clip{std::vector<float>(2 * 160 + 400, 0.1f), 16000};
  EXPECT_EQ(frame_signal(clip, 0.025, 0.010).dim(0), 3u);
}

TEST(FrameSignal, ShortClipIsRejected) {
  AudioClip clip{std::vector<float>(399, 0.1f), 16000};
  try {
    frame_signal(clip, 0.025, 0.010);
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("clip too short"), std::string::npos);
  }
}

TEST(FrameSignal, CountFormulaMatchesNaiveLoop) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 200; ++i) {
    const std::size_t win = std::uniform_int_distribution<std::size_t>(1, 600)(rng);
    const std::size_t hop = std::uniform_int_distribution<std::size_t>(1, win)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(win, 20000)(rng);
    EXPECT_EQ(frame_count(n, win, hop), naive_frame_count(n, win, hop)) << n << " " << win << " " << hop;
  }
}

TEST(FrameSignal, AppliesHannWindow) {
  AudioClip clip{std::vector<float>(400, 1.0f), 16000};
  auto frames = frame_signal(clip, 0.025, 0.010);
  EXPECT_FLOAT_EQ(frames.at(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(frames.at(0, 200), 1.0f);
}

TEST(Lfbe, FftSizeIsNextPowerOfTwo) {
  EXPECT_EQ(LfbeExtractor(44100).fft_size(), 2048u);
  EXPECT_EQ(LfbeExtractor(16000).fft_size(), 512u);
}

TEST(Lfbe, SilenceSitsOnTheFloor) {
  AudioClip clip{std::vector<float>(16000, 0.0f), 16000};
  auto spec = lfbe(clip);
  EXPECT_EQ(spec.n_mels, 64u);
  for (float v : spec.frames.values()) EXPECT_FLOAT_EQ(v, static_cast<float>(std::log(1e-10)));
}

TEST(Lfbe, ToneLandsInItsMelBand) {
  const int sr = 44100;
  for (std::size_t band : {8u, 16u, 32u, 48u, 62u}) {
    const double f = mel_center_hz(band, 64, sr);
    AudioClip clip{std::vector<float>(sr / 2), sr};
    for (std::size_t i = 0; i < clip.samples.size(); ++i)
      clip.samples[i] = static_cast<float>(0.5 * std::sin(2.0 * std::numbers::pi * f * i / sr));
    auto spec = lfbe(clip);
    std::vector<double> mean_energy(64, 0.0);
    for (std::size_t t = 0; t < spec.num_frames(); ++t)
      for (std::size_t j = 0; j < 64; ++j) mean_energy[j] += std::exp(spec.frames.at(t, j));
    const auto argmax = std::max_element(mean_energy.begin(), mean_energy.end()) - mean_energy.begin();
    EXPECT_EQ(static_cast<std::size_t>(argmax), band) << "tone at " << f << " Hz";
  }
}

TEST(Lfbe, SelfConcatenationKeepsInteriorFrames) {
  const int sr = 16000;
  AudioClip clip = noise_clip(160 * 50, sr, 3);  // a whole number of hops
  AudioClip twice = clip;
  twice.samples.insert(twice.samples.end(), clip.samples.begin(), clip.samples.end());
  auto a = lfbe(clip);
  auto b = lfbe(twice);
  const std::size_t shift = clip.samples.size() / 160;
  ASSERT_EQ(b.num_frames(), a.num_frames() + shift);
  for (std::size_t t = 0; t < a.num_frames(); ++t)
    for (std::size_t j = 0; j < 64; ++j) {
      EXPECT_NEAR(b.frames.at(t, j), a.frames.at(t, j), 1e-6);
      EXPECT_NEAR(b.frames.at(t + shift, j), a.frames.at(t, j), 1e-6);
    }
}

TEST(Lfbe, DelayShiftsFrames) {
  const int sr = 16000;
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, 7)(rng);
    AudioClip clip = noise_clip(std::uniform_int_distribution<std::size_t>(2000, 9000)(rng), sr, rng());
    AudioClip delayed{std::vector<float>(k * 160, 0.0f), sr};
    delayed.samples.insert(delayed.samples.end(), clip.samples.begin(), clip.samples.end());
    auto a = lfbe(clip);
    auto b = lfbe(delayed);
    ASSERT_EQ(b.num_frames(), a.num_frames() + k);
    for (std::size_t t = 0; t < a.num_frames(); ++t)
      for (std::size_t j = 0; j < 64; ++j) EXPECT_NEAR(b.frames.at(t + k, j), a.frames.at(t, j), 1e-5);
  }
}

TEST(Lfbe, OutputIsFiniteAndAboveFloor) {
  std::mt19937_64 rng(8);
  const float floor = static_cast<float>(std::log(1e-10));
  for (int trial = 0; trial < 10; ++trial) {
    AudioClip clip = noise_clip(4000, 16000, rng());
    // Mix in exact zeros and full-scale values.
    for (std::size_t i = 0; i < clip.samples.size(); i += 7) clip.samples[i] = (i % 2) ? 1.0f : 0.0f;
    auto spec = lfbe(clip);
    for (float v : spec.frames.values()) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, floor);
    }
  }
}

TEST(Lfbe, RejectsOverlongClip) {
  AudioClip clip{std::vector<float>(16000 * 11, 0.0f), 16000};
  EXPECT_THROW(lfbe(clip), ValidationError);
}

TEST(Lfbe, NormalizeFlagStandardizesBands) {
  LfbeConfig cfg;
  cfg.normalize = true;
  auto spec = lfbe(noise_clip(16000, 16000, 2), cfg);
  for (std::size_t j = 0; j < 64; j += 9) {
    double s = 0.0;
    for (std::size_t t = 0; t < spec.num_frames(); ++t) s += spec.frames.at(t, j);
    EXPECT_NEAR(s / spec.num_frames(), 0.0, 1e-4);
  }
}

}  // namespace
}  // namespace wsaed
