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

// Clip-level (tagging), segment-based and event-based F1, all micro-averaged,
// plus the per-class threshold search run on a development set.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsaed/cam.hpp"

namespace wsaed {

// Slack for comparing times that went through decimal text or a grid.
inline constexpr double kTimeEps = 1e-9;

using TagMap = std::map<std::string, std::set<std::size_t>>;              // clip id -> classes
using EventMap = std::map<std::string, std::vector<EventInterval>>;      // clip id -> events
using DurationMap = std::map<std::string, double>;                       // clip id -> seconds

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  double precision() const { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
  double recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
  double f1() const {
    // 2PR / (P + R) == 2TP / (2TP + FP + FN); the count form is exact.
    const std::size_t d = 2 * tp + fp + fn;
    return d ? 2.0 * static_cast<double>(tp) / static_cast<double>(d) : 0.0;
  }
  bool operator==(const Counts&) const = default;
};

struct EvalReport {
  std::string metric;
  Counts total;
  std::vector<Counts> per_class;
  std::vector<std::string> warnings;

  double precision() const { return total.precision(); }
  double recall() const { return total.recall(); }
  double f1() const { return total.f1(); }

  // Flat key=value lines.
  std::string to_text(const std::vector<std::string>& class_names = {}) const {
    std::ostringstream os;
    os.precision(6);
    os << "# " << metric << " F1, micro-averaged over (clip, class) decisions\n";
    os << "metric=" << metric << "\nprecision=" << precision() << "\nrecall=" << recall() << "\nf1=" << f1()
       << "\ntp=" << total.tp << "\nfp=" << total.fp << "\nfn=" << total.fn << "\n";
    for (std::size_t c = 0; c < per_class.size(); ++c) {
      const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
      const auto& k = per_class[c];
      os << "class." << name << ".f1=" << k.f1() << "\nclass." << name << ".tp=" << k.tp << "\nclass." << name
         << ".fp=" << k.fp << "\nclass." << name << ".fn=" << k.fn << "\n";
    }
    return os.str();
  }

  nlohmann::json to_json(const std::vector<std::string>& class_names = {}) const {
    auto counts = [](const Counts& k) {
      return nlohmann::json{{"tp", k.tp}, {"fp", k.fp}, {"fn", k.fn}, {"precision", k.precision()},
                            {"recall", k.recall()}, {"f1", k.f1()}};
    };
    nlohmann::json j{{"metric", metric}, {"averaging", "micro"}, {"total", counts(total)}};
    j["per_class"] = nlohmann::json::object();
    for (std::size_t c = 0; c < per_class.size(); ++c)
      j["per_class"][c < class_names.size() ? class_names[c] : std::to_string(c)] = counts(per_class[c]);
    j["warnings"] = warnings;
    return j;
  }
};

namespace detail {

inline void finish(EvalReport& r) {
  r.total = {};
  for (const auto& k : r.per_class) r.total += k;
}

inline std::vector<EventInterval> of_class(const std::vector<EventInterval>& events, std::size_t c) {
  std::vector<EventInterval> out;
  for (const auto& e : events)
    if (e.class_id == c) out.push_back(e);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.onset != b.onset ? a.onset < b.onset : a.offset < b.offset;
  });
  return out;
}

inline std::size_t segment_count(double duration, double segment_s) {
  return static_cast<std::size_t>(std::ceil(duration / segment_s - kTimeEps));
}

// Marks segments overlapped with positive duration by any event.
inline std::vector<char> active_segments(const std::vector<EventInterval>& events, double duration,
                                         double segment_s) {
  std::vector<char> active(segment_count(duration, segment_s), 0);
  for (const auto& e : events) {
    const double on = std::max(0.0, e.onset), off = std::min(duration, e.offset);
    for (std::size_t k = 0; k < active.size(); ++k) {
      const double s0 = static_cast<double>(k) * segment_s;
      const double s1 = std::min(duration, s0 + segment_s);
      if (std::min(off, s1) - std::max(on, s0) > kTimeEps) active[k] = 1;
    }
  }
  return active;
}

}  // namespace detail

// Counts for one clip and class from its segment activity.
inline Counts segment_counts(const std::vector<EventInterval>& pred, const std::vector<EventInterval>& ref,
                             double duration, double segment_s) {
  const auto p = detail::active_segments(pred, duration, segment_s);
  const auto r = detail::active_segments(ref, duration, segment_s);
  Counts k;
  for (std::size_t i = 0; i < p.size(); ++i) {
    k.tp += p[i] && r[i];
    k.fp += p[i] && !r[i];
    k.fn += !p[i] && r[i];
  }
  return k;
}

struct EventMatchConfig {
  double onset_collar_s = 0.2;
  double offset_pct = 0.2;  // offset tolerance = max(collar, pct * ref duration)
};

// Greedy one-to-one matching; predictions in onset order, first feasible
// reference wins. Both lists hold a single class.
inline Counts event_counts(const std::vector<EventInterval>& pred, const std::vector<EventInterval>& ref,
                           const EventMatchConfig& cfg) {
  std::vector<char> used(ref.size(), 0);
  Counts k;
  for (const auto& p : pred) {
    bool matched = false;
    for (std::size_t j = 0; j < ref.size() && !matched; ++j) {
      if (used[j]) continue;
      const auto& r = ref[j];
      const double off_tol = std::max(cfg.onset_collar_s, cfg.offset_pct * (r.offset - r.onset));
      if (std::abs(p.onset - r.onset) <= cfg.onset_collar_s + kTimeEps &&
          std::abs(p.offset - r.offset) <= off_tol + kTimeEps) {
        used[j] = 1;
        matched = true;
      }
    }
    matched ? ++k.tp : ++k.fp;
  }
  for (char u : used) k.fn += !u;
  return k;
}

inline EvalReport clip_f1(const TagMap& pred, const TagMap& ref, std::size_t n_classes) {
  for (const auto& [id, _] : pred) WSAED_CHECK(ref.count(id), "prediction for clip '", id, "' has no reference");
  for (const auto& [id, _] : ref) WSAED_CHECK(pred.count(id), "reference clip '", id, "' has no prediction");
  EvalReport r{"clip", {}, std::vector<Counts>(n_classes), {}};
  for (const auto& [id, rt] : ref) {
    const auto& pt = pred.at(id);
    for (std::size_t c : pt) WSAED_CHECK(c < n_classes, "class ", c, " out of range in clip '", id, "'");
    for (std::size_t c : rt) WSAED_CHECK(c < n_classes, "class ", c, " out of range in clip '", id, "'");
    for (std::size_t c = 0; c < n_classes; ++c) {
      const bool p = pt.count(c), t = rt.count(c);
      r.per_class[c].tp += p && t;
      r.per_class[c].fp += p && !t;
      r.per_class[c].fn += !p && t;
    }
  }
  detail::finish(r);
  return r;
}

namespace detail {

// Every evaluated clip needs a duration; predictions for unknown clips are
// an error. Events past the clip end are clipped with a warning.
inline std::vector<EventInterval> clipped(const std::vector<EventInterval>& events, const std::string& id,
                                          double duration, std::vector<std::string>& warnings) {
  std::vector<EventInterval> out;
  for (auto e : events) {
    if (e.offset > duration + kTimeEps || e.onset < -kTimeEps) {
      std::ostringstream os;
      os << "clip '" << id << "': event [" << e.onset << ", " << e.offset << "] clipped to [0, " << duration << "]";
      warnings.push_back(os.str());
      e.onset = std::max(0.0, e.onset);
      e.offset = std::min(duration, e.offset);
    }
    if (e.offset > e.onset) out.push_back(e);
  }
  return out;
}

template <typename PerClass>
EvalReport event_metric(const std::string& name, const EventMap& pred, const EventMap& ref,
                        const DurationMap& durations, std::size_t n_classes, PerClass per_class) {
  EvalReport r{name, {}, std::vector<Counts>(n_classes), {}};
  for (const auto& [id, _] : pred)
    WSAED_CHECK(durations.count(id), "prediction for clip '", id, "' has no reference duration");
  static const std::vector<EventInterval> kNone;
  for (const auto& [id, duration] : durations) {
    WSAED_CHECK(duration > 0.0, "clip '", id, "' has non-positive duration");
    auto pi = pred.find(id);
    auto ri = ref.find(id);
    const auto p = clipped(pi == pred.end() ? kNone : pi->second, id, duration, r.warnings);
    const auto t = clipped(ri == ref.end() ? kNone : ri->second, id, duration, r.warnings);
    for (const auto& e : p) WSAED_CHECK(e.class_id < n_classes, "class ", e.class_id, " out of range");
    for (const auto& e : t) WSAED_CHECK(e.class_id < n_classes, "class ", e.class_id, " out of range");
    for (std::size_t c = 0; c < n_classes; ++c) r.per_class[c] += per_class(of_class(p, c), of_class(t, c), duration);
  }
  finish(r);
  return r;
}

}  // namespace detail

// Clips are the keys of `durations`; a clip absent from pred or ref has no
// events on that side.
inline EvalReport segment_f1(const EventMap& pred, const EventMap& ref, double segment_s,
                             const DurationMap& durations, std::size_t n_classes) {
  WSAED_CHECK(segment_s > 0.0, "segment length must be positive, got ", segment_s);
  return detail::event_metric("segment", pred, ref, durations, n_classes,
                              [segment_s](const auto& p, const auto& t, double d) {
                                return segment_counts(p, t, d, segment_s);
                              });
}

inline EvalReport event_f1(const EventMap& pred, const EventMap& ref, const DurationMap& durations,
                           std::size_t n_classes, const EventMatchConfig& cfg = {}) {
  WSAED_CHECK(cfg.onset_collar_s > 0.0, "onset collar must be positive, got ", cfg.onset_collar_s);
  return detail::event_metric("event", pred, ref, durations, n_classes,
                              [&cfg](const auto& p, const auto& t, double) { return event_counts(p, t, cfg); });
}

// ---------------------------------------------------------------------------
// Threshold search

enum class Objective { kTagging, kSegment, kEvent };

inline Objective parse_objective(const std::string& s) {
  if (s == "tagging") return Objective::kTagging;
  if (s == "segment") return Objective::kSegment;
  if (s == "event") return Objective::kEvent;
  throw ValidationError("unknown objective '" + s + "' (expected tagging, segment or event)");
}

struct DevClip {
  ClipScores scores;
  std::set<std::size_t> ref_tags;
  std::vector<EventInterval> ref_events;
  double duration = 0.0;
};

struct TuneConfig {
  Objective objective = Objective::kTagging;
  double segment_s = 1.0;
  EventMatchConfig event{};
  std::size_t max_median = 31;
  std::size_t th_f_quantiles = 101;
};

inline std::vector<double> th_u_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 99; ++i) g.push_back(i / 100.0);
  return g;
}

// Quantiles of `values` at i / (n - 1), nearest rank, deduplicated.
inline std::vector<double> quantile_grid(std::vector<float> values, std::size_t n) {
  std::vector<double> g;
  if (values.empty() || n == 0) return g;
  std::sort(values.begin(), values.end());
  for (std::size_t i = 0; i < n; ++i) {
    const double q = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    const auto idx = static_cast<std::size_t>(std::llround(q * static_cast<double>(values.size() - 1)));
    g.push_back(values[idx]);
  }
  g.erase(std::unique(g.begin(), g.end()), g.end());
  return g;
}

struct TunedClass {
  ClassThreshold threshold;
  double f1 = 0.0;
};

// Exhaustive per-class search. Each class maximizes its own F1 under the
// objective; ties go to the larger th_u, then the larger th_f, then the
// shorter median filter.
inline ThresholdSet tune_thresholds(const std::vector<DevClip>& dev, std::size_t n_classes, const TuneConfig& cfg,
                                    std::vector<double>* best_f1 = nullptr) {
  WSAED_CHECK(!dev.empty(), "cannot tune thresholds on an empty dev set");
  for (const auto& d : dev) {
    WSAED_CHECK(d.scores.probs.size() == n_classes, "dev clip scores cover ", d.scores.probs.size(),
                " classes, expected ", n_classes);
    if (cfg.objective != Objective::kTagging) {
      WSAED_CHECK(d.scores.sequences.size() == n_classes, "dev clip lacks activation sequences");
      WSAED_CHECK(d.duration > 0.0, "dev clip lacks a duration for the ", "localization objective");
    }
  }
  const auto grid_u = th_u_grid();
  ThresholdSet out = ThresholdSet::uniform(n_classes);
  if (best_f1) best_f1->assign(n_classes, 0.0);

  for (std::size_t c = 0; c < n_classes; ++c) {
    // For every clip: counts when the clip is tagged and when it is not.
    // Untagged clips emit nothing, so only the reference side counts.
    struct Option {
      double th_f;
      std::size_t median;
      std::vector<Counts> tagged;
    };
    std::vector<Counts> untagged(dev.size());
    std::vector<Option> options;
    if (cfg.objective == Objective::kTagging) {
      Option o{0.0, 1, std::vector<Counts>(dev.size())};
      for (std::size_t i = 0; i < dev.size(); ++i) {
        const bool t = dev[i].ref_tags.count(c);
        o.tagged[i] = {t ? 1u : 0u, t ? 0u : 1u, 0};
        untagged[i] = {0, 0, t ? 1u : 0u};
      }
      options.push_back(std::move(o));
    } else {
      std::vector<float> pooled;
      std::vector<std::vector<EventInterval>> refs(dev.size());
      for (std::size_t i = 0; i < dev.size(); ++i) {
        pooled.insert(pooled.end(), dev[i].scores.sequences[c].begin(), dev[i].scores.sequences[c].end());
        refs[i] = detail::of_class(dev[i].ref_events, c);
      }
      auto counts = [&](const std::vector<EventInterval>& pred, std::size_t i) {
        return cfg.objective == Objective::kSegment ? segment_counts(pred, refs[i], dev[i].duration, cfg.segment_s)
                                                    : event_counts(pred, refs[i], cfg.event);
      };
      for (std::size_t i = 0; i < dev.size(); ++i) untagged[i] = counts({}, i);
      for (double th_f : quantile_grid(std::move(pooled), cfg.th_f_quantiles)) {
        for (std::size_t m = 1; m <= cfg.max_median; m += 2) {
          Option o{th_f, m, std::vector<Counts>(dev.size())};
          for (std::size_t i = 0; i < dev.size(); ++i) {
            auto ev = decode_events(dev[i].scores.sequences[c], th_f, m, dev[i].scores.time_resolution_s, c);
            o.tagged[i] = counts(ev, i);
          }
          options.push_back(std::move(o));
        }
      }
    }

    TunedClass best{{grid_u.front(), options.front().th_f, options.front().median}, -1.0};
    auto better = [](const TunedClass& a, const TunedClass& b) {
      if (a.f1 != b.f1) return a.f1 > b.f1;
      if (a.threshold.th_u != b.threshold.th_u) return a.threshold.th_u > b.threshold.th_u;
      if (a.threshold.th_f != b.threshold.th_f) return a.threshold.th_f > b.threshold.th_f;
      return a.threshold.median_len < b.threshold.median_len;
    };
    for (const auto& o : options) {
      for (double th_u : grid_u) {
        Counts k;
        for (std::size_t i = 0; i < dev.size(); ++i)
          k += dev[i].scores.probs[c] > th_u ? o.tagged[i] : untagged[i];
        TunedClass cand{{th_u, o.th_f, o.median}, k.f1()};
        if (better(cand, best)) best = cand;
      }
    }
    out.classes[c] = best.threshold;
    if (best_f1) (*best_f1)[c] = best.f1;
  }
  return out;
}

}  // namespace wsaed
