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

// Independent reference implementations for the metric tests. Everything
// here works in integer centiseconds so no floating-point boundary can
// disagree with the rasterized ground truth.

#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "wsaed/metrics.hpp"

namespace wsaed::testing {

struct CsEvent {
  std::size_t cls;
  long on, off;  // centiseconds, on < off
};

struct SegmentInstance {
  std::size_t n_classes = 1;
  long segment_cs = 100;
  std::map<std::string, long> duration_cs;
  std::map<std::string, std::vector<CsEvent>> pred_cs, ref_cs;
  EventMap pred, ref;

  DurationMap durations() const {
    DurationMap d;
    for (const auto& [id, cs] : duration_cs) d[id] = cs / 100.0;
    return d;
  }
};

inline EventMap to_seconds(const std::map<std::string, std::vector<CsEvent>>& m) {
  EventMap out;
  for (const auto& [id, evs] : m)
    for (const auto& e : evs) out[id].push_back({e.cls, e.on / 100.0, e.off / 100.0});
  return out;
}

inline SegmentInstance random_segment_instance(std::mt19937_64& rng) {
  auto uni = [&](long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(rng); };
  SegmentInstance s;
  s.n_classes = static_cast<std::size_t>(uni(1, 3));
  const long segs[] = {10, 25, 50, 100, 30, 70};
  s.segment_cs = segs[uni(0, 5)];
  const long clips = uni(1, 3);
  for (long c = 0; c < clips; ++c) {
    const std::string id = "clip" + std::to_string(c);
    const long dur = uni(50, 600);
    s.duration_cs[id] = dur;
    for (auto* side : {&s.pred_cs, &s.ref_cs}) {
      auto& evs = (*side)[id];
      const long n = uni(0, 4);
      for (long k = 0; k < n; ++k) {
        const long on = uni(0, dur - 1);
        evs.push_back({static_cast<std::size_t>(uni(0, static_cast<long>(s.n_classes) - 1)), on, uni(on + 1, dur)});
      }
    }
  }
  s.pred = to_seconds(s.pred_cs);
  s.ref = to_seconds(s.ref_cs);
  return s;
}

// Rasterize every event onto a 10 ms grid, then pool the grid into
// segments: a segment is active if any of its cells is.
inline Counts raster_segment_counts(const SegmentInstance& s) {
  Counts k;
  for (const auto& [id, dur] : s.duration_cs) {
    for (std::size_t c = 0; c < s.n_classes; ++c) {
      auto raster = [&](const std::map<std::string, std::vector<CsEvent>>& m) {
        std::vector<char> cells(static_cast<std::size_t>(dur), 0);
        auto it = m.find(id);
        if (it != m.end())
          for (const auto& e : it->second)
            if (e.cls == c)
              for (long t = e.on; t < e.off; ++t) cells[static_cast<std::size_t>(t)] = 1;
        std::vector<char> seg;
        for (long s0 = 0; s0 < dur; s0 += s.segment_cs) {
          char a = 0;
          for (long t = s0; t < std::min(dur, s0 + s.segment_cs); ++t) a |= cells[static_cast<std::size_t>(t)];
          seg.push_back(a);
        }
        return seg;
      };
      const auto p = raster(s.pred_cs), r = raster(s.ref_cs);
      for (std::size_t i = 0; i < p.size(); ++i) {
        k.tp += p[i] && r[i];
        k.fp += p[i] && !r[i];
        k.fn += !p[i] && r[i];
      }
    }
  }
  return k;
}

// Replaces every event by a 0.1 s event at its onset rounded to whole
// seconds, dropping duplicates, so no two candidates are within a collar.
inline EventMap short_events(const EventMap& m) {
  EventMap out;
  for (const auto& [id, evs] : m) {
    std::set<std::pair<std::size_t, long>> seen;
    for (const auto& e : evs) {
      const long sec = static_cast<long>(e.onset);
      if (seen.insert({e.class_id, sec}).second) out[id].push_back({e.class_id, double(sec), sec + 0.1});
    }
  }
  return out;
}

inline TagMap tags_of(const EventMap& m, const DurationMap& clips) {
  TagMap out;
  for (const auto& [id, _] : clips) out[id];
  for (const auto& [id, evs] : m)
    for (const auto& e : evs) out[id].insert(e.class_id);
  return out;
}

}  // namespace wsaed::testing
