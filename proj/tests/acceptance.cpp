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

// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only
// when all pass. `acceptance 1 4` runs a subset. Pipeline artifacts and a
// copy of the lines (report.txt) stay under WSAED_WORK for inspection.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "metric_oracles.hpp"
#include "op_cases.hpp"
#include "wsaed/alloc.hpp"
#include "wsaed/augmentation.hpp"
#include "wsaed/cam.hpp"
#include "wsaed/densenet.hpp"
#include "wsaed/metrics.hpp"
#include "wsaed/synth.hpp"
#include "wsaed/train.hpp"
#include "wsaed/tri_training.hpp"

namespace {

using namespace wsaed;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// 1. Finite-difference gradients

Outcome gradients() {
  constexpr int kPerOp = 25;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  double worst = 0.0;
  std::string worst_case;
  std::size_t cases = 0, failures = 0;
  for (const auto& [name, factory] : testing::all_case_factories()) {
    for (int i = 0; i < kPerOp; ++i) {
      auto c = factory(rng);
      const auto r = testing::check_gradients(c.fn, c.inputs, c.differentiable, rng());
      ++cases;
      if (!(r.max_rel_error < 1e-4)) ++failures;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_case = c.op + " " + c.shape;
      }
    }
  }
  const double secs = seconds_since(t0);
  const std::size_t ops = testing::all_case_factories().size();
  return {failures == 0 && secs < 120.0,
          fmt("%zu ops x %d random shapes, %zu failures, worst relative error %.2e (%s), %.1f s", ops, kPerOp, failures,
              worst, worst_case.c_str(), secs)};
}

// ---------------------------------------------------------------------------
// 2. mean(M_c) = S_c

Outcome cam_identity() {
  std::mt19937_64 rng(77);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::string detail;
  bool pass = true;
  for (const ArchSpec& arch : {ArchSpec::densenet63(17), ArchSpec::densenet120(10)}) {
    double worst = 0.0;
    std::size_t pairs = 0;
    for (int trial = 0; trial < 50; ++trial) {
      auto w = build_model<float>(arch, 1000 + static_cast<std::uint64_t>(trial));
      const std::size_t T = 32 + rng() % 97;
      Tensor<float> x({T, arch.n_mels});
      for (auto& v : x.values()) v = normal(rng);
      const auto out = infer(w, Spectrogram{x, 0.01, arch.n_mels});
      for (std::size_t c = 0; c < arch.n_classes; ++c) {
        const auto cam = compute_cam(out, w, c, 0.16);
        double sum = 0.0;
        for (float v : cam.map.values()) sum += v;
        worst = std::max(worst, std::abs(sum / static_cast<double>(cam.map.size()) - out.scores[c]));
      }
      ++pairs;
    }
    pass = pass && worst <= 1e-4;
    detail += fmt("%s%s: %zu pairs, max |mean(M_c) - S_c| = %.2e", detail.empty() ? "" : "; ", arch.name.c_str(),
                  pairs, worst);
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 3. Parameter count

// Closed form over the layer list: 7x7 stem, per dense layer BN + 1x1 to
// 4g + BN + 3x3 to g, transitions BN + 1x1 to floor(c/2), final BN and a
// bias-free classifier. BN contributes gamma and beta.
std::size_t closed_form_parameters(const std::vector<std::size_t>& blocks, std::size_t g, std::size_t init,
                                   std::size_t classes) {
  std::size_t n = init * 49, c = init;
  const std::size_t bw = 4 * g;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t l = 0; l < blocks[b]; ++l) {
      n += 2 * c + c * bw + 2 * bw + bw * g * 9;
      c += g;
    }
    if (b + 1 < blocks.size()) {
      n += 2 * c + c * (c / 2);
      c /= 2;
    }
  }
  return n + 2 * c + classes * c;
}

Outcome parameter_count() {
  const auto w = build_model<float>(ArchSpec::densenet63(17), 1);
  const std::size_t built = w.parameter_count();
  const std::size_t oracle = closed_form_parameters({3, 6, 12, 8}, 32, 64, 17);
  const double dev = (static_cast<double>(built) - 2.34e6) / 2.34e6;
  const auto& a = w.arch;
  return {built == oracle && std::abs(dev) <= 0.10,
          fmt("densenet63 (17 classes) has %zu parameters (closed form %zu), %+.2f%% from 2.34M; "
              "bottleneck %zux growth = %zu channels, compression theta = %.1f, initial filters %zu, growth %zu, "
              "blocks 3-6-12-8",
              built, oracle, 100.0 * dev, a.bottleneck_factor, a.bottleneck_width(), a.compression, a.init_features,
              a.growth_rate)};
}

// ---------------------------------------------------------------------------
// 4. Metric oracles

Outcome metric_oracles() {
  std::mt19937_64 rng(4242);
  std::size_t agree = 0;
  for (int i = 0; i < 200; ++i) {
    const auto inst = testing::random_segment_instance(rng);
    const auto r = segment_f1(inst.pred, inst.ref, inst.segment_cs / 100.0, inst.durations(), inst.n_classes);
    agree += r.total == testing::raster_segment_counts(inst);
  }
  // 4 s clip, ref 0.5-2.3 s, pred 1.0-3.0 s, 1 s segments.
  const auto hand = segment_f1({{"clip", {{0, 1.0, 3.0}}}}, {{"clip", {{0, 0.5, 2.3}}}}, 1.0, {{"clip", 4.0}}, 1);
  const bool point_eight = hand.total == Counts{2, 0, 1} && hand.f1() == 0.8;
  // Collar 0.2 s, offset 20%: (1.1, 2.05) matches (1.0, 2.0); onset 1.5 does not.
  const auto near = event_f1({{"a", {{0, 1.1, 2.05}}}}, {{"a", {{0, 1.0, 2.0}}}}, {{"a", 10.0}}, 1);
  const auto far = event_f1({{"a", {{0, 1.5, 2.0}}}}, {{"a", {{0, 1.0, 2.0}}}}, {{"a", 10.0}}, 1);
  const bool collar = near.total == Counts{1, 0, 0} && near.f1() == 1.0 && far.total == Counts{0, 1, 1};
  return {agree == 200 && point_eight && collar,
          fmt("segment_f1 equals the 10 ms raster oracle on %zu/200 instances; hand example F1 = %.15g (%s); "
              "collar example F1 = %.15g, shifted onset F1 = %.15g (%s)",
              agree, hand.f1(), point_eight ? "ok" : "wrong", near.f1(), far.f1(), collar ? "ok" : "wrong")};
}

// ---------------------------------------------------------------------------
// 5 and 8. End to end through the command-line tool

int sh(const std::string& cmd) {
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

// f1= from a text report.
double report_f1(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("f1=", 0) == 0) return std::stod(line.substr(3));
  return -1.0;
}

struct PipelineRun {
  bool ok = false;
  std::string failed_step;
  double seconds = 0.0, clip_f1 = -1.0, segment_f1 = -1.0;
  fs::path dir;
};

constexpr const char* kReducedConfig =
    "preset = dcase2017\n"
    "growth_rate = 12\n"
    "block_layers = 2,3,4,3\n"
    "ensemble = 1\n"
    "seed = 1\n";

PipelineRun run_pipeline(const fs::path& dir) {
  PipelineRun run;
  run.dir = dir;
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "run.cfg") << kReducedConfig;
  const std::string w = std::string("'") + WSAED_CLI + "' ";
  const std::string cfg = " --config run.cfg";
  const std::vector<std::string> steps = {
      "synth-corpus --out corpus --seed 1",
      "featurize" + cfg + " --manifest corpus/train.jsonl --out features/train.feat",
      "featurize" + cfg + " --manifest corpus/dev.jsonl --out features/dev.feat",
      "featurize" + cfg + " --manifest corpus/eval.jsonl --out features/eval.feat",
      "train" + cfg + " --train corpus/train.jsonl --train-features features/train.feat --dev corpus/dev.jsonl "
                      "--dev-features features/dev.feat --out model/weights.bin",
      "tune-thresholds" + cfg + " --weights model/weights.bin --dev corpus/dev.jsonl --features features/dev.feat "
                                "--objective segment --out model/thresholds.json",
      "infer-events" + cfg + " --weights model/weights.bin --manifest corpus/eval.jsonl --features "
                             "features/eval.feat --thresholds model/thresholds.json --out pred/eval.jsonl",
      "evaluate" + cfg + " --pred pred/eval.jsonl --ref corpus/eval.jsonl --metric clip --out report/clip.txt "
                         "--json report/clip.json",
      "evaluate" + cfg + " --pred pred/eval.jsonl --ref corpus/eval.jsonl --metric segment --segment-s 1.0 "
                         "--out report/segment.txt --json report/segment.json",
  };
  const auto t0 = Clock::now();
  for (const auto& s : steps) {
    std::cerr << "[acceptance] wsaed " << s << "\n";
    if (sh("cd '" + dir.string() + "' && " + w + s + " 2>>log.txt >/dev/null") != 0) {
      run.failed_step = s.substr(0, s.find(' '));
      return run;
    }
  }
  run.seconds = seconds_since(t0);
  run.clip_f1 = report_f1(dir / "report/clip.txt");
  run.segment_f1 = report_f1(dir / "report/segment.txt");
  run.ok = true;
  return run;
}

Outcome end_to_end(const PipelineRun& r) {
  if (!r.ok) return {false, "pipeline step '" + r.failed_step + "' failed; see " + (r.dir / "log.txt").string()};
  return {r.clip_f1 >= 0.90 && r.segment_f1 >= 0.60 && r.seconds <= 1800.0,
          fmt("reduced densenet63 (growth 12, blocks 2-3-4-3), dcase2017 recipe: eval clip F1 %.4f (>= 0.90), "
              "segment F1 %.4f (>= 0.60), %.1f min (<= 30)",
              r.clip_f1, r.segment_f1, r.seconds / 60.0)};
}

Outcome determinism(const PipelineRun& a, const PipelineRun& b) {
  if (!a.ok || !b.ok) return {false, "a pipeline run failed"};
  const char* artifacts[] = {"model/weights.bin", "model/thresholds.json", "pred/eval.jsonl", "report/clip.txt",
                             "report/clip.json",  "report/segment.txt",    "report/segment.json"};
  std::string differ;
  for (const char* f : artifacts) {
    const std::string x = slurp(a.dir / f), y = slurp(b.dir / f);
    if (x.empty() || x != y) differ += std::string(differ.empty() ? "" : ", ") + f;
  }
  return {differ.empty(), differ.empty() ? fmt("weights (%zu bytes), thresholds, predictions and reports of two "
                                               "seeded runs are byte-identical",
                                               slurp(a.dir / "model/weights.bin").size())
                                         : "differing artifacts: " + differ};
}

// ---------------------------------------------------------------------------
// 6. Augmentation counts, labels and determinism

Outcome augmentation(const fs::path& dir) {
  fs::remove_all(dir);
  SynthConfig sc;
  sc.train = 1578;
  sc.dev = sc.eval = 0;
  sc.clip_s = 0.5;
  sc.sample_rate = 8000;
  sc.f_low = 200.0;
  sc.f_high = 2000.0;
  sc.event_min_s = 0.1;
  sc.event_max_s = 0.4;
  sc.seed = 6;
  const auto corpus = synth_corpus(sc, dir / "corpus");
  const fs::path manifest = dir / "corpus/train.jsonl";
  const auto& vocab = corpus.vocab;
  const auto originals = load_manifest(manifest, vocab);

  AugmentConfig ac;
  ac.target_count = 3578;
  ac.seed = 11;
  const auto a = augment_corpus(manifest, vocab, ac, dir / "a/train.jsonl");
  const auto b = augment_corpus(manifest, vocab, ac, dir / "b/train.jsonl");

  // Oracle: labels recomputed from the original manifest on disk.
  std::map<std::string, std::set<std::size_t>> truth;
  std::map<std::string, fs::path> audio;
  for (const auto& r : originals) {
    truth[r.id] = r.weak;
    audio[r.id] = resolve_audio(manifest, r);
  }
  const auto written = load_manifest(dir / "a/train.jsonl", vocab);
  std::size_t derived = 0, shifts = 0, mixes = 0, union_ok = 0, shift_audio_ok = 0, shift_audio_checked = 0;
  for (const auto& r : written) {
    if (!r.derived_from) continue;
    ++derived;
    std::set<std::size_t> expect;
    for (const auto& s : r.derived_from->sources) expect.insert(truth.at(s).begin(), truth.at(s).end());
    union_ok += r.weak == expect;
    if (r.derived_from->op == "shift") {
      ++shifts;
      if (shift_audio_checked < 25) {
        ++shift_audio_checked;
        auto src = read_wav(audio.at(r.derived_from->sources[0])).samples;
        std::rotate(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(r.derived_from->shift), src.end());
        shift_audio_ok += read_wav(dir / "a" / r.path).samples == src;
      }
    } else {
      ++mixes;
    }
  }
  bool same = slurp(dir / "a/train.jsonl") == slurp(dir / "b/train.jsonl");
  std::size_t wavs = 0;
  for (const auto& r : written)
    if (r.derived_from) {
      same = same && slurp(dir / "a" / r.path) == slurp(dir / "b" / r.path);
      ++wavs;
    }
  const bool pass = originals.size() == 1578 && written.size() == 3578 && derived == 2000 &&
                    a.derived == 2000 && union_ok == derived && shift_audio_ok == shift_audio_checked && same;
  return {pass, fmt("%zu -> %zu records, %zu derived (%zu shift, %zu mix); label union holds for %zu/%zu; "
                    "%zu/%zu shifted clips match an independent rotation; second run %s (manifest and %zu WAVs)",
                    originals.size(), written.size(), derived, shifts, mixes, union_ok, derived, shift_audio_ok,
                    shift_audio_checked, same ? "byte-identical" : "DIFFERS", wavs)};
}

// ---------------------------------------------------------------------------
// 7. Tri-training on duplicated clips

double clip_f1_at(const std::vector<std::vector<float>>& probs, const std::vector<Example>& xs) {
  return clip_f1(tags_at(xs, probs, 0.5), reference_tags(xs), probs.empty() ? 0 : probs[0].size()).f1();
}

Outcome tri_training(const fs::path& dir) {
  fs::remove_all(dir);
  SynthConfig sc;
  sc.train = 80;
  sc.dev = 24;
  sc.eval = 60;
  sc.clip_s = 2.0;
  sc.seed = 7;
  const auto corpus = synth_corpus(sc, dir);
  LfbeConfig fc;
  fc.n_mels = 32;
  auto load = [&](const char* split) {
    return featurize(dir / (std::string(split) + ".jsonl"), corpus.splits.at(split), fc);
  };
  const auto labeled = load("train"), dev = load("dev"), eval = load("eval");

  // Unlabeled clips duplicate the labeled ones under fresh ids; the truth
  // stays here, away from the training path.
  std::vector<Example> unlabeled;
  std::map<std::string, std::set<std::size_t>> truth;
  for (const auto& x : labeled) {
    Example u = x;
    u.id = "dup_" + x.id;
    truth[u.id] = x.labels;
    u.labels.clear();
    unlabeled.push_back(std::move(u));
  }

  TrainConfig tc;
  tc.arch = ArchSpec::densenet63(sc.n_classes).with_growth(8);
  tc.arch.block_layers = {1, 2, 2, 1};
  tc.arch.n_mels = fc.n_mels;
  tc.batch_size = 40;
  tc.ghost_batch = 40;
  tc.max_epochs = 40;
  tc.patience = 10;
  tc.finetune_epochs = 5;
  DenseNetLearner learner{tc, dev, {}};
  TriConfig cfg;
  cfg.tau = 0.9;
  cfg.rounds = 2;
  cfg.seeds = {101, 202, 303};
  auto st = tri_train(learner, labeled, unlabeled, cfg);

  std::size_t decisions = 0, correct = 0;
  for (const auto& round : st.pools)
    for (const auto& pool : round)
      for (const auto& p : pool)
        for (std::size_t c : p.labels) {
          ++decisions;
          correct += truth.at(p.clip_id).count(c);
        }
  const double precision = decisions ? static_cast<double>(correct) / static_cast<double>(decisions) : 0.0;

  auto members = st.ensemble();
  double mean_f1 = 0.0;
  std::string each;
  for (auto* m : members) {
    const double f = clip_f1_at(predict_probs(*m, eval), eval);
    mean_f1 += f / static_cast<double>(members.size());
    each += fmt("%s%.3f", each.empty() ? "" : " ", f);
  }
  const double ens_f1 = clip_f1_at(ensemble_probs(members, eval), eval);
  const bool pass = decisions > 0 && precision >= 0.95 && members.size() == 6 && ens_f1 >= mean_f1 - 0.01;
  return {pass, fmt("pseudo-label precision %.4f over %zu (clip, class) decisions at tau 0.9 (>= 0.95); "
                    "%zu-model ensemble eval clip F1 %.4f vs member mean %.4f (members: %s)",
                    precision, decisions, members.size(), ens_f1, mean_f1, each.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  wsaed::tune_allocator();
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int c) { return only.empty() || only.count(c); };
  const fs::path work = WSAED_WORK;
  fs::create_directories(work);

  std::map<int, Outcome> results;
  std::string report;
  auto attempt = [&](int id, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = Clock::now();
    try {
      results[id] = fn();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("exception: ") + e.what()};
    }
    const auto& r = results[id];
    const std::string line =
        fmt("%s criterion %d: ", r.pass ? "PASS" : "FAIL", id) + r.detail + fmt(" [%.1f s]\n", seconds_since(t0));
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    report += line;
  };

  attempt(1, gradients);
  attempt(2, cam_identity);
  attempt(3, parameter_count);
  attempt(4, metric_oracles);
  attempt(6, [&] { return augmentation(work / "augmentation"); });
  attempt(7, [&] { return tri_training(work / "tri_training"); });
  PipelineRun first;
  if (wanted(5) || wanted(8)) first = run_pipeline(work / "pipeline_a");
  attempt(5, [&] { return end_to_end(first); });
  attempt(8, [&] { return determinism(first, run_pipeline(work / "pipeline_b")); });

  bool all = true;
  for (const auto& [id, r] : results) all = all && r.pass;
  const std::string summary =
      fmt("%s: %zu criteria run, %zu passed\n", all ? "ALL PASS" : "SOME FAILED", results.size(),
          static_cast<std::size_t>(
              std::count_if(results.begin(), results.end(), [](const auto& kv) { return kv.second.pass; })));
  std::fputs(summary.c_str(), stdout);
  report += summary;
  // ctest hides the output of passing tests; keep a copy beside the artifacts.
  std::ofstream(work / "report.txt") << report;
  return all ? 0 : 1;
}
