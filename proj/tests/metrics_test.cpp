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

#include <random>

#include "metric_oracles.hpp"
#include "wsaed/metrics.hpp"

namespace wsaed {
namespace {

TEST(ClipF1, PerfectAndEmpty) {
  TagMap ref{{"a", {0, 2}}, {"b", {1}}};
  EXPECT_DOUBLE_EQ(clip_f1(ref, ref, 3).f1(), 1.0);
  TagMap none{{"a", {}}, {"b", {}}};
  EXPECT_DOUBLE_EQ(clip_f1(none, ref, 3).f1(), 0.0);
}

TEST(ClipF1, HandCountedHalf) {
  TagMap ref{{"c1", {0}}, {"c2", {1}}};
  TagMap pred{{"c1", {0, 1}}, {"c2", {}}};
  auto r = clip_f1(pred, ref, 2);
  EXPECT_EQ(r.total, (Counts{1, 1, 1}));
  EXPECT_DOUBLE_EQ(r.f1(), 0.5);
}

TEST(ClipF1, DifferentClipSetsAreRejected) {
  EXPECT_THROW(clip_f1({{"x", {}}}, {{"y", {}}}, 1), ValidationError);
}

TEST(SegmentF1, HandEnumeratedPointEight) {
  EventMap ref{{"clip", {{0, 0.5, 2.3}}}};
  EventMap pred{{"clip", {{0, 1.0, 3.0}}}};
  auto r = segment_f1(pred, ref, 1.0, {{"clip", 4.0}}, 1);
  EXPECT_EQ(r.total, (Counts{2, 0, 1}));
  EXPECT_DOUBLE_EQ(r.precision(), 1.0);
  EXPECT_DOUBLE_EQ(r.recall(), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.f1(), 0.8);
}

TEST(SegmentF1, IdenticalIsOne) {
  EventMap ev{{"a", {{0, 0.1, 0.9}, {1, 2.0, 3.5}}}, {"b", {{1, 0.0, 4.0}}}};
  EXPECT_DOUBLE_EQ(segment_f1(ev, ev, 1.0, {{"a", 4.0}, {"b", 4.0}}, 2).f1(), 1.0);
}

TEST(SegmentF1, TouchingBoundaryIsNotOverlap) {
  EventMap ref{{"a", {{0, 0.0, 1.0}}}};
  auto r = segment_f1(ref, ref, 1.0, {{"a", 3.0}}, 1);
  EXPECT_EQ(r.total, (Counts{1, 0, 0}));
}

TEST(SegmentF1, OverlongEventIsClippedWithWarning) {
  EventMap ref{{"a", {{0, 3.5, 6.0}}}};
  auto r = segment_f1(ref, ref, 1.0, {{"a", 4.0}}, 1);
  EXPECT_EQ(r.total, (Counts{1, 0, 0}));
  EXPECT_FALSE(r.warnings.empty());
}

TEST(SegmentF1, MatchesRasterOracle) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 200; ++i) {
    auto inst = testing::random_segment_instance(rng);
    auto r = segment_f1(inst.pred, inst.ref, inst.segment_cs / 100.0, inst.durations(), inst.n_classes);
    auto oracle = testing::raster_segment_counts(inst);
    ASSERT_EQ(r.total, oracle) << "instance " << i;
  }
}

TEST(EventF1, WithinCollarMatches) {
  EventMap ref{{"a", {{0, 1.0, 2.0}}}};
  EventMap pred{{"a", {{0, 1.1, 2.05}}}};
  EXPECT_DOUBLE_EQ(event_f1(pred, ref, {{"a", 10.0}}, 1).f1(), 1.0);
}

TEST(EventF1, OnsetOutsideCollarFails) {
  EventMap ref{{"a", {{0, 1.0, 2.0}}}};
  EventMap pred{{"a", {{0, 1.5, 2.0}}}};
  auto r = event_f1(pred, ref, {{"a", 10.0}}, 1);
  EXPECT_EQ(r.total, (Counts{0, 1, 1}));
  EXPECT_DOUBLE_EQ(r.f1(), 0.0);
}

TEST(EventF1, OffsetToleranceScalesWithDuration) {
  // 5 s reference: offset tolerance is 1 s, not 0.2 s.
  EventMap ref{{"a", {{0, 1.0, 6.0}}}};
  EventMap pred{{"a", {{0, 1.1, 6.9}}}};
  EXPECT_DOUBLE_EQ(event_f1(pred, ref, {{"a", 10.0}}, 1).f1(), 1.0);
}

TEST(EventF1, OneToOneMatching) {
  EventMap ref{{"a", {{0, 1.0, 2.0}}}};
  EventMap pred{{"a", {{0, 1.0, 2.0}, {0, 1.05, 2.0}}}};
  EXPECT_EQ(event_f1(pred, ref, {{"a", 10.0}}, 1).total, (Counts{1, 1, 0}));
}

TEST(EventF1, ClassesNeverCrossMatch) {
  EventMap ref{{"a", {{0, 1.0, 2.0}}}};
  EventMap pred{{"a", {{1, 1.0, 2.0}}}};
  EXPECT_EQ(event_f1(pred, ref, {{"a", 10.0}}, 2).total, (Counts{0, 1, 1}));
}

TEST(EventF1, IdenticalIsOne) {
  EventMap ev{{"a", {{0, 0.1, 0.9}, {0, 2.0, 3.5}, {1, 1.0, 1.5}}}};
  EXPECT_DOUBLE_EQ(event_f1(ev, ev, {{"a", 4.0}}, 2).f1(), 1.0);
}

TEST(Metrics, EmptySideGivesZero) {
  EventMap ev{{"a", {{0, 0.1, 0.9}}}};
  DurationMap d{{"a", 4.0}};
  EXPECT_DOUBLE_EQ(segment_f1({}, ev, 1.0, d, 1).f1(), 0.0);
  EXPECT_DOUBLE_EQ(segment_f1(ev, {}, 1.0, d, 1).f1(), 0.0);
  EXPECT_DOUBLE_EQ(event_f1({}, ev, d, 1).f1(), 0.0);
  EXPECT_DOUBLE_EQ(event_f1(ev, {}, d, 1).f1(), 0.0);
}

// Swapping prediction and reference swaps precision and recall.
TEST(Metrics, SwapExchangesPrecisionAndRecall) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 50; ++i) {
    auto inst = testing::random_segment_instance(rng);
    const double seg = inst.segment_cs / 100.0;
    auto a = segment_f1(inst.pred, inst.ref, seg, inst.durations(), inst.n_classes);
    auto b = segment_f1(inst.ref, inst.pred, seg, inst.durations(), inst.n_classes);
    EXPECT_DOUBLE_EQ(a.precision(), b.recall());
    EXPECT_DOUBLE_EQ(a.f1(), b.f1());
    // Short, well-separated events keep greedy event matching symmetric.
    auto sa = testing::short_events(inst.pred), sb = testing::short_events(inst.ref);
    auto ea = event_f1(sa, sb, inst.durations(), inst.n_classes);
    auto eb = event_f1(sb, sa, inst.durations(), inst.n_classes);
    EXPECT_DOUBLE_EQ(ea.precision(), eb.recall());
    auto ta = testing::tags_of(inst.pred, inst.durations()), tb = testing::tags_of(inst.ref, inst.durations());
    EXPECT_DOUBLE_EQ(clip_f1(ta, tb, inst.n_classes).precision(), clip_f1(tb, ta, inst.n_classes).recall());
  }
}

TEST(Report, TextAndJsonCarryCounts) {
  TagMap ref{{"c1", {0}}, {"c2", {1}}};
  TagMap pred{{"c1", {0, 1}}, {"c2", {}}};
  auto r = clip_f1(pred, ref, 2);
  const auto text = r.to_text({"dog", "cat"});
  EXPECT_NE(text.find("f1=0.5"), std::string::npos);
  EXPECT_NE(text.find("class.cat.fp=1"), std::string::npos);
  EXPECT_NE(text.find("micro"), std::string::npos);
  auto j = r.to_json({"dog", "cat"});
  EXPECT_EQ(j["total"]["tp"], 1);
  EXPECT_EQ(j["averaging"], "micro");
}

// ---------------------------------------------------------------------------

DevClip dev_clip(float prob, std::vector<float> seq, bool positive, std::vector<EventInterval> ev, double res = 0.5) {
  DevClip d;
  d.scores = {{prob}, {std::move(seq)}, res};
  if (positive) d.ref_tags = {0};
  d.ref_events = std::move(ev);
  d.duration = static_cast<double>(d.scores.sequences[0].size()) * res;
  return d;
}

TEST(Tune, TaggingSeparatesClassesWithLargestThreshold) {
  std::vector<DevClip> dev{dev_clip(0.75f, {0}, true, {}), dev_clip(0.25f, {0}, false, {})};
  std::vector<double> f1;
  auto t = tune_thresholds(dev, 1, {}, &f1);
  EXPECT_DOUBLE_EQ(f1[0], 1.0);
  // Every th_u in [0.25, 0.74] separates; the largest wins.
  EXPECT_DOUBLE_EQ(t.classes[0].th_u, 0.74);
}

TEST(Tune, SingleClipReturnsOptimalGridPoint) {
  std::vector<DevClip> dev{dev_clip(0.5f, {0}, true, {})};
  std::vector<double> f1;
  auto t = tune_thresholds(dev, 1, {}, &f1);
  EXPECT_DOUBLE_EQ(f1[0], 1.0);
  EXPECT_DOUBLE_EQ(t.classes[0].th_u, 0.49);
}

TEST(Tune, SegmentObjectiveBeatsEveryGridPoint) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0, 1), s(-2, 2);
  std::vector<DevClip> dev;
  for (int i = 0; i < 6; ++i) {
    std::vector<float> seq(8);
    for (auto& v : seq) v = s(rng);
    const bool pos = i % 2 == 0;
    std::vector<EventInterval> ev;
    if (pos) ev.push_back({0, 0.5 * (i % 3), 0.5 * (i % 3) + 1.5});
    dev.push_back(dev_clip(u(rng), seq, pos, ev));
  }
  TuneConfig cfg;
  cfg.objective = Objective::kSegment;
  cfg.max_median = 5;
  std::vector<double> f1;
  auto t = tune_thresholds(dev, 1, cfg, &f1);

  // Re-evaluate every grid point with the public metric.
  auto score = [&](const ClassThreshold& th) {
    EventMap pred, ref;
    DurationMap d;
    for (std::size_t i = 0; i < dev.size(); ++i) {
      const std::string id = std::to_string(i);
      d[id] = dev[i].duration;
      ref[id] = dev[i].ref_events;
      pred[id] = predict(dev[i].scores, ThresholdSet{{th}}).events;
    }
    return segment_f1(pred, ref, cfg.segment_s, d, 1).f1();
  };
  EXPECT_DOUBLE_EQ(score(t.classes[0]), f1[0]);
  std::vector<float> pooled;
  for (const auto& d : dev) pooled.insert(pooled.end(), d.scores.sequences[0].begin(), d.scores.sequences[0].end());
  for (double th_f : quantile_grid(pooled, 101))
    for (std::size_t m = 1; m <= 5; m += 2)
      for (double th_u : th_u_grid()) EXPECT_LE(score({th_u, th_f, m}), f1[0] + 1e-12);
}

TEST(Tune, EmptyDevSetIsRejected) {
  EXPECT_THROW(tune_thresholds({}, 1, {}), ValidationError);
}

TEST(Tune, QuantileGridSpansObservedRange) {
  auto g = quantile_grid({3, 1, 2, 5, 4}, 101);
  EXPECT_DOUBLE_EQ(g.front(), 1.0);
  EXPECT_DOUBLE_EQ(g.back(), 5.0);
  EXPECT_EQ(g.size(), 5u);
}

}  // namespace
}  // namespace wsaed
