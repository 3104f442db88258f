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

// Weak-label augmentation by circular shift and pairwise mixing.
//
// Planning and rendering are separate. plan_augmentation decides every
// derived record (sources, shift, gains, labels) from the seed and source
// lengths alone; render_derived produces the audio of one planned record.
// Derived record k draws from its own engine seeded by (seed, k), so any
// subset can be rendered in any order.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "wsaed/corpus.hpp"
#include "wsaed/rng.hpp"

namespace wsaed {

using WeakLabelSet = std::set<std::size_t>;

inline AudioClip circular_shift(const AudioClip& clip, std::size_t shift) {
  const std::size_t n = clip.samples.size();
  WSAED_CHECK(shift < n || (n == 0 && shift == 0), "shift ", shift, " outside [0, ", n, ")");
  AudioClip out{std::vector<float>(n), clip.sample_rate};
  if (n == 0) return out;
  std::rotate_copy(clip.samples.begin(), clip.samples.begin() + static_cast<std::ptrdiff_t>(shift),
                   clip.samples.end(), out.samples.begin());
  return out;
}

struct LabeledClip {
  AudioClip audio;
  WeakLabelSet labels;
};

// gain_a * a + gain_b * b with the shorter clip zero-padded; scaled down to
// unit peak only when the sum would clip.
inline LabeledClip mix_clips(const LabeledClip& a, const LabeledClip& b, double gain_a, double gain_b) {
  WSAED_CHECK(a.audio.sample_rate == b.audio.sample_rate, "cannot mix clips at ", a.audio.sample_rate, " Hz and ",
              b.audio.sample_rate, " Hz");
  const std::size_t n = std::max(a.audio.samples.size(), b.audio.samples.size());
  std::vector<double> sum(n, 0.0);
  for (std::size_t i = 0; i < a.audio.samples.size(); ++i) sum[i] += gain_a * a.audio.samples[i];
  for (std::size_t i = 0; i < b.audio.samples.size(); ++i) sum[i] += gain_b * b.audio.samples[i];
  double peak = 0.0;
  for (double v : sum) peak = std::max(peak, std::abs(v));
  const double scale = peak > 1.0 ? 1.0 / peak : 1.0;
  LabeledClip out{{std::vector<float>(n), a.audio.sample_rate}, a.labels};
  for (std::size_t i = 0; i < n; ++i) out.audio.samples[i] = static_cast<float>(sum[i] * scale);
  out.labels.insert(b.labels.begin(), b.labels.end());
  return out;
}

struct AugmentConfig {
  std::size_t target_count = 0;
  std::uint64_t seed = 1;
  double gain_min = 0.5, gain_max = 1.0;
  std::string id_prefix = "aug";
};

// Derived records appended after `records`. `n_samples` gives each
// record's length in samples (read lazily, e.g. from WAV headers).
// Records that are themselves derived never serve as sources.
inline std::vector<ClipRecord> plan_augmentation(const std::vector<ClipRecord>& records, const AugmentConfig& cfg,
                                                 const std::function<std::size_t(const ClipRecord&)>& n_samples) {
  WSAED_CHECK(cfg.target_count >= records.size(), "augmentation target ", cfg.target_count,
              " is below the current count ", records.size());
  WSAED_CHECK(cfg.gain_min > 0.0 && cfg.gain_min <= cfg.gain_max, "mixing gains need 0 < gain_min <= gain_max");
  std::vector<std::size_t> sources;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (!records[i].derived_from) sources.push_back(i);
  const std::size_t to_add = cfg.target_count - records.size();
  if (to_add == 0) return {};
  WSAED_CHECK(!sources.empty(), "no original clips to augment");
  const bool can_mix = sources.size() >= 2;

  std::set<std::string> taken;
  for (const auto& r : records) taken.insert(r.id);
  std::vector<std::size_t> lengths(records.size(), 0);
  std::vector<bool> known(records.size(), false);
  auto length = [&](std::size_t i) {
    if (!known[i]) {
      lengths[i] = n_samples(records[i]);
      known[i] = true;
    }
    return lengths[i];
  };

  std::vector<ClipRecord> out;
  out.reserve(to_add);
  for (std::size_t k = 0; k < to_add; ++k) {
    const std::uint64_t seed = derive_seed(cfg.seed, "augment", k);
    std::mt19937_64 rng(seed);
    auto pick = [&] { return sources[std::uniform_int_distribution<std::size_t>(0, sources.size() - 1)(rng)]; };
    ClipRecord r;
    char id[64];
    std::snprintf(id, sizeof(id), "%s%05zu", cfg.id_prefix.c_str(), k);
    r.id = id;
    WSAED_CHECK(!taken.count(r.id), "derived id '", r.id, "' collides with an existing record");
    r.path = "audio/" + r.id + ".wav";
    r.split = "train";
    Provenance p;
    p.seed = seed;
    if (k % 2 == 0 || !can_mix) {
      const std::size_t s = pick();
      const std::size_t n = length(s);
      WSAED_CHECK(n > 0, "clip '", records[s].id, "' is empty");
      p.op = "shift";
      p.sources = {records[s].id};
      p.shift = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      r.weak = records[s].weak;
      if (records[s].duration) r.duration = records[s].duration;
    } else {
      const std::size_t s = pick();
      std::size_t t = pick();
      while (t == s) t = pick();
      std::uniform_real_distribution<double> gain(cfg.gain_min, cfg.gain_max);
      const double ga = gain(rng), gb = gain(rng);
      p.op = "mix";
      p.sources = {records[s].id, records[t].id};
      p.gains = {ga, gb};
      r.weak = records[s].weak;
      r.weak.insert(records[t].weak.begin(), records[t].weak.end());
      if (records[s].duration && records[t].duration)
        r.duration = std::max(*records[s].duration, *records[t].duration);
    }
    r.derived_from = std::move(p);
    out.push_back(std::move(r));
  }
  return out;
}

// Audio of one planned record; `load` fetches an original by id.
inline AudioClip render_derived(const ClipRecord& r, const std::function<AudioClip(const std::string&)>& load) {
  WSAED_CHECK(r.derived_from.has_value(), "record '", r.id, "' is not derived");
  const auto& p = *r.derived_from;
  if (p.op == "shift") {
    WSAED_CHECK(p.sources.size() == 1, "shift record '", r.id, "' needs one source");
    return circular_shift(load(p.sources[0]), p.shift);
  }
  WSAED_CHECK(p.op == "mix" && p.sources.size() == 2 && p.gains.size() == 2, "record '", r.id,
              "' has malformed provenance");
  return mix_clips({load(p.sources[0]), {}}, {load(p.sources[1]), {}}, p.gains[0], p.gains[1]).audio;
}

struct AugmentResult {
  std::vector<ClipRecord> records;  // originals first, then derived
  std::size_t derived = 0;
};

// Reads `manifest`, plans up to cfg.target_count records, renders derived
// audio under out_manifest's directory and writes the combined manifest.
// Original paths are rewritten relative to the new manifest.
inline AugmentResult augment_corpus(const fs::path& manifest, const Vocabulary& vocab, const AugmentConfig& cfg,
                                    const fs::path& out_manifest, SampleFormat fmt = SampleFormat::kFloat32) {
  auto records = load_manifest(manifest, vocab);
  std::map<std::string, const ClipRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;
  // No audio cache: a 1,578-clip corpus would not fit comfortably.
  auto load = [&](const std::string& id) { return read_wav(resolve_audio(manifest, *by_id.at(id))); };
  auto derived = plan_augmentation(records, cfg, [&](const ClipRecord& r) { return load(r.id).samples.size(); });

  const fs::path out_dir = out_manifest.has_parent_path() ? out_manifest.parent_path() : fs::path(".");
  for (const auto& r : derived) write_wav(out_dir / r.path, render_derived(r, load), fmt);
  AugmentResult result;
  result.derived = derived.size();
  for (auto r : records) {
    const fs::path abs = fs::absolute(resolve_audio(manifest, r));
    r.path = fs::proximate(abs, fs::absolute(out_dir)).generic_string();
    result.records.push_back(std::move(r));
  }
  for (auto& r : derived) result.records.push_back(std::move(r));
  save_manifest(out_manifest, result.records, vocab);
  return result;
}

}  // namespace wsaed
