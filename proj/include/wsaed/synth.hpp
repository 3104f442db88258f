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

// Synthetic event corpus: white background noise plus 1-3 events per clip.
// Each class owns one waveform family (sine tone, linear chirp or
// band-passed noise burst) around its own center frequency, and events of
// one class never overlap inside a clip. Event gain follows the drawn SNR
// against the background RMS.
//
// Every random draw happens whatever the SNR range, so two corpora that
// differ only in SNR settings differ only in event gains.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsaed/corpus.hpp"
#include "wsaed/rng.hpp"

namespace wsaed {

struct SynthConfig {
  std::size_t n_classes = 4;
  std::size_t train = 200, dev = 50, eval = 50, unlabeled = 0;
  double clip_s = 4.0;
  int sample_rate = 16000;
  double snr_min_db = 5.0, snr_max_db = 20.0;
  std::size_t events_min = 1, events_max = 3;
  double event_min_s = 0.4, event_max_s = 1.6;
  double background_rms = 0.005;
  double f_low = 400.0, f_high = 5000.0;  // center frequencies span this range
  std::uint64_t seed = 1;
  SampleFormat format = SampleFormat::kFloat32;

  void validate() const {
    WSAED_CHECK(n_classes >= 2, "synthetic corpus needs at least 2 classes, got ", n_classes);
    WSAED_CHECK(clip_s > 0.0 && sample_rate > 0, "clip length and sample rate must be positive");
    WSAED_CHECK(snr_min_db <= snr_max_db, "snr_min_db must not exceed snr_max_db");
    WSAED_CHECK(events_min >= 1 && events_min <= events_max, "need 1 <= events_min <= events_max");
    WSAED_CHECK(event_min_s > 0.0 && event_min_s <= event_max_s && event_max_s <= clip_s,
                "event lengths must satisfy 0 < min <= max <= clip length");
    WSAED_CHECK(f_low > 0.0 && f_high > f_low && f_high * 1.5 < sample_rate / 2.0,
                "center frequencies must lie well below Nyquist");
  }
};

enum class WaveFamily { kTone, kChirp, kNoise };

inline WaveFamily family_of(std::size_t class_id) { return static_cast<WaveFamily>(class_id % 3); }

inline const char* family_name(WaveFamily f) {
  switch (f) {
    case WaveFamily::kTone: return "tone";
    case WaveFamily::kChirp: return "chirp";
    default: return "noise";
  }
}

inline double center_hz(const SynthConfig& cfg, std::size_t class_id) {
  const double t = cfg.n_classes > 1 ? static_cast<double>(class_id) / static_cast<double>(cfg.n_classes - 1) : 0.0;
  return cfg.f_low * std::pow(cfg.f_high / cfg.f_low, t);
}

inline Vocabulary synth_vocabulary(const SynthConfig& cfg) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < cfg.n_classes; ++c)
    names.push_back(std::string(family_name(family_of(c))) + std::to_string(c));
  return Vocabulary(std::move(names));
}

struct SynthEvent {
  std::size_t class_id;
  double onset, offset;
  double snr_db, gain;
  std::uint64_t wave_seed;
};

struct SynthClip {
  ClipRecord record;
  AudioClip audio;
  std::uint64_t seed = 0;
  std::vector<SynthEvent> events;
};

namespace detail {

// RBJ band-pass biquad, 0 dB peak gain.
inline void bandpass(std::vector<double>& x, double f0, double q, int sr) {
  const double w0 = 2.0 * std::numbers::pi * f0 / sr, alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  const double b0 = alpha / a0, b2 = -alpha / a0, a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (auto& v : x) {
    const double y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = v;
    y2 = y1;
    y1 = y;
    v = y;
  }
}

// Unit-RMS event waveform with 20 ms raised-cosine fades.
inline std::vector<double> event_wave(WaveFamily fam, double fc, std::size_t n, int sr, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> x(n);
  const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  switch (fam) {
    case WaveFamily::kTone:
      for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2.0 * std::numbers::pi * fc * i / sr + phase);
      break;
    case WaveFamily::kChirp: {
      // Linear sweep from 0.7 fc to 1.4 fc over the event.
      const double f0 = 0.7 * fc, f1 = 1.4 * fc, T = static_cast<double>(n) / sr;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        x[i] = std::sin(2.0 * std::numbers::pi * (f0 * t + 0.5 * (f1 - f0) / T * t * t) + phase);
      }
      break;
    }
    case WaveFamily::kNoise: {
      std::normal_distribution<double> g(0.0, 1.0);
      for (auto& v : x) v = g(rng);
      bandpass(x, fc, 2.0, sr);
      bandpass(x, fc, 2.0, sr);
      break;
    }
  }
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(std::max<std::size_t>(n, 1)));
  const std::size_t fade = std::min(n / 2, static_cast<std::size_t>(0.02 * sr));
  for (std::size_t i = 0; i < n; ++i) {
    double g = rms > 0.0 ? 1.0 / rms : 0.0;
    if (i < fade) g *= 0.5 - 0.5 * std::cos(std::numbers::pi * i / fade);
    if (n - 1 - i < fade) g *= 0.5 - 0.5 * std::cos(std::numbers::pi * (n - 1 - i) / fade);
    x[i] *= g;
  }
  return x;
}

}  // namespace detail

// Clip `index` of `split`; depends only on (cfg, split, index).
inline SynthClip synth_clip(const SynthConfig& cfg, const std::string& split, std::size_t index) {
  SynthClip out;
  out.seed = derive_seed(cfg.seed, split, index);
  std::mt19937_64 rng(out.seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const std::size_t n = samples_for(cfg.clip_s, cfg.sample_rate);

  // Draws are made unconditionally and in a fixed order.
  const std::size_t n_events =
      std::uniform_int_distribution<std::size_t>(cfg.events_min, cfg.events_max)(rng);
  for (std::size_t e = 0; e < n_events; ++e) {
    const std::size_t c = std::uniform_int_distribution<std::size_t>(0, cfg.n_classes - 1)(rng);
    const double dur = uni(cfg.event_min_s, cfg.event_max_s);
    const double snr = uni(0.0, 1.0);
    const std::uint64_t wave_seed = rng();
    // Onset candidates: the first that keeps same-class events disjoint.
    std::optional<double> onset;
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double on = std::round(uni(0.0, cfg.clip_s - dur) * 1000.0) / 1000.0;
      bool clash = false;
      for (const auto& o : out.events)
        clash = clash || (o.class_id == c && on < o.offset && o.onset < on + dur);
      if (!clash && !onset) onset = on;
    }
    if (!onset) continue;
    const double off = std::min(cfg.clip_s, std::round((*onset + dur) * 1000.0) / 1000.0);
    const double snr_db = cfg.snr_min_db + snr * (cfg.snr_max_db - cfg.snr_min_db);
    out.events.push_back({c, *onset, off, snr_db, cfg.background_rms * std::pow(10.0, snr_db / 20.0), wave_seed});
  }

  std::vector<double> mix(n);
  std::mt19937_64 bg(derive_seed(out.seed, "background"));
  std::normal_distribution<double> g(0.0, cfg.background_rms);
  for (auto& v : mix) v = g(bg);
  for (const auto& e : out.events) {
    const std::size_t i0 = samples_for(e.onset, cfg.sample_rate);
    const std::size_t i1 = std::min(n, samples_for(e.offset, cfg.sample_rate));
    const auto w = detail::event_wave(family_of(e.class_id), center_hz(cfg, e.class_id), i1 - i0, cfg.sample_rate,
                                      e.wave_seed);
    for (std::size_t i = i0; i < i1; ++i) mix[i] += e.gain * w[i - i0];
  }
  out.audio.sample_rate = cfg.sample_rate;
  out.audio.samples.assign(mix.begin(), mix.end());

  auto& r = out.record;
  char id[64];
  std::snprintf(id, sizeof(id), "%s_%04zu", split.c_str(), index);
  r.id = id;
  r.path = "audio/" + r.id + ".wav";
  r.split = split;
  r.duration = cfg.clip_s;
  std::vector<EventInterval> strong;
  for (const auto& e : out.events) {
    r.weak.insert(e.class_id);
    strong.push_back({e.class_id, e.onset, e.offset});
  }
  std::sort(strong.begin(), strong.end(), [](const auto& a, const auto& b) {
    return a.onset != b.onset ? a.onset < b.onset : a.class_id < b.class_id;
  });
  // Only dev and eval carry timestamps; the training path sees weak labels.
  if (split == "dev" || split == "eval") r.strong = std::move(strong);
  return out;
}

inline nlohmann::json synth_meta(const SynthClip& c, const Vocabulary& vocab) {
  nlohmann::json j{{"id", c.record.id}, {"split", c.record.split}, {"seed", c.seed}, {"events", nlohmann::json::array()}};
  for (const auto& e : c.events)
    j["events"].push_back({{"label", vocab.name(e.class_id)},
                           {"onset", e.onset},
                           {"offset", e.offset},
                           {"family", family_name(family_of(e.class_id))},
                           {"wave_seed", e.wave_seed},
                           {"snr_db", e.snr_db},
                           {"gain", e.gain}});
  return j;
}

struct SynthCorpus {
  Vocabulary vocab;
  std::map<std::string, std::vector<ClipRecord>> splits;
};

// Writes audio/, classes.txt, one <split>.jsonl per non-empty split and
// synth_meta.jsonl (per-event generation parameters, including true
// timestamps for every split).
inline SynthCorpus synth_corpus(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  SynthCorpus corpus{synth_vocabulary(cfg), {}};
  fs::create_directories(out_dir / "audio");
  corpus.vocab.save(out_dir / "classes.txt");
  std::string meta;
  const std::pair<const char*, std::size_t> plan[] = {
      {"train", cfg.train}, {"dev", cfg.dev}, {"eval", cfg.eval}, {"unlabeled", cfg.unlabeled}};
  for (const auto& [split, count] : plan) {
    if (count == 0) continue;
    auto& records = corpus.splits[split];
    for (std::size_t i = 0; i < count; ++i) {
      SynthClip clip = synth_clip(cfg, split, i);
      write_wav(out_dir / clip.record.path, clip.audio, cfg.format);
      meta += synth_meta(clip, corpus.vocab).dump() + "\n";
      if (std::string(split) == "unlabeled") clip.record.weak.clear();
      records.push_back(std::move(clip.record));
    }
    save_manifest(out_dir / (std::string(split) + ".jsonl"), records, corpus.vocab);
  }
  detail::write_file_atomic(out_dir / "synth_meta.jsonl", meta);
  return corpus;
}

}  // namespace wsaed
