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

// wsaed: batch frontend. Every subcommand reads its inputs from flags,
// writes one declared artifact and exits 0, 1 on invalid input or 2 on a
// runtime failure.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wsaed/alloc.hpp"
#include "wsaed/augmentation.hpp"
#include "wsaed/config.hpp"
#include "wsaed/corpus.hpp"
#include "wsaed/synth.hpp"
#include "wsaed/train.hpp"
#include "wsaed/tri_training.hpp"

namespace {

using namespace wsaed;
using json = nlohmann::json;

struct Common {
  std::string config_file, preset;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::string classes;

  RunConfig resolve(std::size_t n_classes) const {
    KeyValues file, over;
    if (!config_file.empty()) file = load_key_values(config_file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      WSAED_CHECK(eq != std::string::npos && eq > 0, "--set expects key=value, got '", s, "'");
      over[s.substr(0, eq)] = s.substr(eq + 1);
    }
    if (!preset.empty()) over["preset"] = preset;
    if (seed) over["seed"] = std::to_string(*seed);
    return resolve_config(file, over, n_classes);
  }

  // --classes, else classes.txt beside the manifest.
  Vocabulary vocab(const fs::path& manifest) const {
    if (!classes.empty()) return Vocabulary::load(classes);
    return Vocabulary::load((manifest.has_parent_path() ? manifest.parent_path() : fs::path(".")) / "classes.txt");
  }
};

void log(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

fs::path dir_of(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& p, const std::string& s) {
  ensure_parent(p);
  detail::write_file_atomic(p, s);
}

// Manifest plus features, from an archive when one is given.
struct Split {
  fs::path manifest;
  std::vector<ClipRecord> records;
  std::vector<Example> examples;
};

Split load_split(const std::string& manifest, const std::string& features, const Vocabulary& vocab,
                 const LfbeConfig& cfg) {
  Split s{manifest, load_manifest(manifest, vocab), {}};
  if (features.empty())
    s.examples = featurize(s.manifest, s.records, cfg);
  else
    s.examples = examples_from_archive(load_archive(features), s.records, features);
  return s;
}

EpochCallback epoch_logger(const std::string& tag, std::string* sink) {
  return [tag, sink](const EpochLog& e) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s epoch %3zu %-8s lr %.4g loss %.5f dev_f1 %.4f (%.1f s)", tag.c_str(),
                  e.epoch, e.phase.c_str(), e.lr, e.train_loss, e.dev_f1, e.seconds);
    log(buf);
    if (sink)
      *sink += json{{"member", tag}, {"epoch", e.epoch}, {"phase", e.phase}, {"lr", e.lr},
                    {"train_loss", e.train_loss}, {"dev_f1", e.dev_f1}, {"seconds", e.seconds}}
                   .dump() +
               "\n";
  };
}

json training_meta(const RunConfig& rc) {
  return json{{"seed", rc.train.seed}, {"config_hash", rc.hash()}, {"config", rc.to_json()}};
}

ThresholdSet load_thresholds(const fs::path& p, std::size_t n_classes) {
  std::ifstream in(p);
  WSAED_CHECK(in, "cannot open thresholds file '", p.string(), "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
  ThresholdSet t = (j.is_object() ? j.at("classes") : j).get<ThresholdSet>();
  WSAED_CHECK(t.classes.size() == n_classes, p.string(), ": thresholds cover ", t.classes.size(),
              " classes, model has ", n_classes);
  return t;
}

// Output record for clip i: the input record with labels replaced and the
// audio path rebased onto the output manifest's directory.
ClipRecord output_record(const Split& s, std::size_t i, const fs::path& out) {
  ClipRecord r = s.records[i];
  r.path = fs::proximate(fs::absolute(resolve_audio(s.manifest, r)), fs::absolute(dir_of(out))).generic_string();
  r.duration = record_duration(s.manifest, s.records[i]);
  r.derived_from.reset();
  r.strong.reset();
  r.weak.clear();
  return r;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common& co, const SynthConfig& base, const std::string& out, bool pcm16) {
  SynthConfig cfg = base;
  if (co.seed) cfg.seed = *co.seed;
  cfg.format = pcm16 ? SampleFormat::kPcm16 : SampleFormat::kFloat32;
  auto corpus = synth_corpus(cfg, out);
  for (const auto& [split, recs] : corpus.splits) log(split + ": " + std::to_string(recs.size()) + " clips");
  return 0;
}

int cmd_featurize(const Common& co, const std::string& manifest, const std::string& out) {
  const auto vocab = co.vocab(manifest);
  const auto rc = co.resolve(vocab.size());
  const auto records = load_manifest(manifest, vocab);
  const auto xs = featurize(manifest, records, rc.features);
  ensure_parent(out);
  save_archive(out, features_archive(xs, rc.features));
  log("featurized " + std::to_string(xs.size()) + " clips");
  return 0;
}

struct TrainIO {
  std::string train, train_features, dev, dev_features, out, log_file;
};

int cmd_train(const Common& co, const TrainIO& io) {
  const auto vocab = co.vocab(io.train);
  const auto rc = co.resolve(vocab.size());
  const auto train = load_split(io.train, io.train_features, vocab, rc.features);
  std::vector<Example> dev;
  if (!io.dev.empty()) dev = load_split(io.dev, io.dev_features, vocab, rc.features).examples;
  else log("warning: no dev set; the last epoch is kept");

  WeightsFile wf{rc.train.arch, {}, training_meta(rc)};
  wf.training["members"] = json::array();
  std::string history;
  for (std::size_t m = 0; m < rc.ensemble; ++m) {
    TrainConfig tc = rc.train;
    tc.seed = member_seed(rc.train.seed, m);
    auto res = train_model(train.examples, dev, tc, nullptr, epoch_logger("m" + std::to_string(m), &history));
    wf.training["members"].push_back(
        {{"seed", tc.seed}, {"epochs", res.history.size()}, {"best_epoch", res.best_epoch},
         {"best_dev_f1", res.best_dev_f1}});
    wf.members.push_back(std::move(res.model));
  }
  ensure_parent(io.out);
  save_weights(io.out, wf);
  write_text(io.log_file.empty() ? io.out + ".log.jsonl" : io.log_file, history);
  return 0;
}

int cmd_tri_train(const Common& co, const TrainIO& io, const std::string& unlabeled,
                  const std::string& unlabeled_features, const std::string& pools_dir) {
  const auto vocab = co.vocab(io.train);
  const auto rc = co.resolve(vocab.size());
  const auto train = load_split(io.train, io.train_features, vocab, rc.features);
  const auto unl = load_split(unlabeled, unlabeled_features, vocab, rc.features);
  std::vector<Example> dev;
  if (!io.dev.empty()) dev = load_split(io.dev, io.dev_features, vocab, rc.features).examples;

  std::string history;
  DenseNetLearner learner{rc.train, dev, epoch_logger("tri", rc.tri.parallel ? nullptr : &history)};
  std::map<std::string, ClipRecord> originals;
  for (const auto& r : unl.records) originals[r.id] = r;
  PoolCallback on_pool;
  if (!pools_dir.empty())
    on_pool = [&](std::size_t r, std::size_t i, const std::vector<PseudoLabel>& pool) {
      fs::create_directories(pools_dir);
      const fs::path p = fs::path(pools_dir) / ("round" + std::to_string(r) + "_model" + std::to_string(i) + ".jsonl");
      auto recs = pool_records(pool, originals);
      for (auto& x : recs)
        x.path = fs::proximate(fs::absolute(resolve_audio(unl.manifest, x)), fs::absolute(p.parent_path()))
                     .generic_string();
      save_manifest(p, recs, vocab);
      log("round " + std::to_string(r) + " model " + std::to_string(i) + ": " + std::to_string(pool.size()) +
          " pseudo-labeled clips");
    };
  auto st = tri_train(learner, train.examples, unl.examples, rc.tri, on_pool);

  WeightsFile wf{rc.train.arch, {}, training_meta(rc)};
  wf.training["tri"] = {{"rounds", st.round + 1}, {"tau", rc.tri.tau}, {"seeds", rc.tri.seeds}};
  for (auto* m : st.ensemble()) wf.members.push_back(*m);
  ensure_parent(io.out);
  save_weights(io.out, wf);
  write_text(io.log_file.empty() ? io.out + ".log.jsonl" : io.log_file, history);
  return 0;
}

struct InferIO {
  std::string weights, manifest, features, thresholds, out;
  double threshold = 0.5;
};

int cmd_infer(const Common& co, const InferIO& io, bool events) {
  const auto vocab = co.vocab(io.manifest);
  const auto rc = co.resolve(vocab.size());
  auto wf = load_weights(io.weights);
  WSAED_CHECK_SHAPE(wf.arch.n_classes == vocab.size(), io.weights, ": model has ", wf.arch.n_classes,
                    " classes, the class list has ", vocab.size());
  const auto s = load_split(io.manifest, io.features, vocab, rc.features);
  ThresholdSet th = ThresholdSet::uniform(vocab.size());
  if (!io.thresholds.empty())
    th = load_thresholds(io.thresholds, vocab.size());
  else {
    WSAED_CHECK(!events, "infer-events needs --thresholds (see tune-thresholds)");
    WSAED_CHECK(io.threshold > 0.0 && io.threshold < 1.0, "--threshold must lie in (0, 1)");
    for (auto& c : th.classes) c.th_u = io.threshold;
  }
  auto members = member_ptrs(wf.members);
  std::vector<ClipRecord> out;
  if (events) {
    const auto scores = ensemble_scores(members, s.examples);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const auto p = predict(scores[i], th);
      ClipRecord r = output_record(s, i, io.out);
      r.weak.insert(p.tags.begin(), p.tags.end());
      // The activation grid is padded up to whole cells, so it can run a
      // little past the clip end.
      r.strong.emplace();
      for (auto e : p.events) {
        e.offset = std::min(e.offset, *r.duration);
        if (e.offset > e.onset) r.strong->push_back(e);
      }
      out.push_back(std::move(r));
    }
  } else {
    const auto probs = ensemble_probs(members, s.examples);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      ClipRecord r = output_record(s, i, io.out);
      for (std::size_t c = 0; c < probs[i].size(); ++c)
        if (probs[i][c] > th.classes[c].th_u) r.weak.insert(c);
      out.push_back(std::move(r));
    }
  }
  ensure_parent(io.out);
  save_manifest(io.out, out, vocab);
  return 0;
}

int cmd_tune(const Common& co, const InferIO& io, const std::string& objective) {
  const auto vocab = co.vocab(io.manifest);
  const auto rc = co.resolve(vocab.size());
  auto wf = load_weights(io.weights);
  WSAED_CHECK_SHAPE(wf.arch.n_classes == vocab.size(), io.weights, ": model has ", wf.arch.n_classes,
                    " classes, the class list has ", vocab.size());
  const auto s = load_split(io.manifest, io.features, vocab, rc.features);
  TuneConfig tc;
  tc.objective = objective.empty() ? rc.objective : parse_objective(objective);
  tc.segment_s = rc.segment_s;
  tc.event = rc.event;
  auto scores = ensemble_scores(member_ptrs(wf.members), s.examples);
  std::vector<DevClip> dev;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& r = s.records[i];
    if (tc.objective != Objective::kTagging)
      WSAED_CHECK(r.strong.has_value(), "dev clip '", r.id, "' has no strong labels; the ",
                  objective.empty() ? "configured" : objective, " objective needs them");
    dev.push_back({std::move(scores[i]), r.weak, r.strong.value_or(std::vector<EventInterval>{}),
                   record_duration(s.manifest, r)});
  }
  std::vector<double> f1;
  const auto th = tune_thresholds(dev, vocab.size(), tc, &f1);
  static const char* names[] = {"tagging", "segment", "event"};
  json j{{"objective", names[static_cast<int>(tc.objective)]}, {"classes", th}, {"dev_f1", json::object()}};
  for (std::size_t c = 0; c < f1.size(); ++c) j["dev_f1"][vocab.name(c)] = f1[c];
  write_text(io.out, j.dump(2) + "\n");
  return 0;
}

struct EvalIO {
  std::string pred, ref, metric = "clip", out, json_out;
  std::optional<double> segment_s, collar_s, offset_pct;
};

int cmd_evaluate(const Common& co, const EvalIO& io) {
  const auto vocab = co.vocab(io.ref);
  const auto rc = co.resolve(vocab.size());
  const auto ref = load_manifest(io.ref, vocab);
  const auto pred = load_manifest(io.pred, vocab);
  EvalReport rep;
  if (io.metric == "clip") {
    TagMap p, t;
    for (const auto& r : pred) p[r.id] = r.weak;
    for (const auto& r : ref) t[r.id] = r.weak;
    rep = clip_f1(p, t, vocab.size());
  } else {
    WSAED_CHECK(io.metric == "segment" || io.metric == "event", "unknown metric '", io.metric,
                "' (expected clip, segment or event)");
    EventMap p, t;
    DurationMap d;
    for (const auto& r : ref) {
      WSAED_CHECK(r.strong.has_value(), "reference clip '", r.id, "' has no strong labels");
      t[r.id] = *r.strong;
      d[r.id] = record_duration(io.ref, r);
    }
    for (const auto& r : pred) p[r.id] = r.strong.value_or(std::vector<EventInterval>{});
    if (io.metric == "segment") {
      rep = segment_f1(p, t, io.segment_s.value_or(rc.segment_s), d, vocab.size());
    } else {
      EventMatchConfig ec = rc.event;
      if (io.collar_s) ec.onset_collar_s = *io.collar_s;
      if (io.offset_pct) ec.offset_pct = *io.offset_pct;
      rep = event_f1(p, t, d, vocab.size(), ec);
    }
  }
  for (const auto& w : rep.warnings) log("warning: " + w);
  const std::string text = rep.to_text(vocab.names());
  std::cout << text;
  if (!io.out.empty()) write_text(io.out, text);
  if (!io.json_out.empty()) write_text(io.json_out, rep.to_json(vocab.names()).dump(2) + "\n");
  return 0;
}

int cmd_augment(const Common& co, const std::string& manifest, const std::string& out,
                std::optional<std::size_t> target, bool pcm16) {
  const auto vocab = co.vocab(manifest);
  const auto rc = co.resolve(vocab.size());
  AugmentConfig ac;
  ac.target_count = target.value_or(rc.augment_target);
  ac.seed = rc.augment_seed;
  WSAED_CHECK(ac.target_count > 0, "no augmentation target: pass --target or set augment_target");
  auto res = augment_corpus(manifest, vocab, ac, out, pcm16 ? SampleFormat::kPcm16 : SampleFormat::kFloat32);
  if (!fs::exists(dir_of(out) / "classes.txt")) vocab.save(dir_of(out) / "classes.txt");
  log("added " + std::to_string(res.derived) + " derived clips, " + std::to_string(res.records.size()) + " total");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  wsaed::tune_allocator();
  CLI::App app{"Weakly supervised acoustic event detection"};
  app.require_subcommand(1);
  Common co;
  auto add_common = [&](CLI::App* sc) {
    sc->add_option("--config", co.config_file, "key = value config file")->check(CLI::ExistingFile);
    sc->add_option("--preset", co.preset, "dcase2017 or dcase2018");
    sc->add_option("--seed", co.seed, "master seed");
    sc->add_option("--set", co.sets, "override one config key (key=value), repeatable");
    sc->add_option("--classes", co.classes, "class list (default: classes.txt beside the manifest)");
  };

  std::function<int()> run;

  auto* synth = app.add_subcommand("synth-corpus", "write a synthetic corpus with known event times");
  SynthConfig sc;
  std::string synth_out;
  bool pcm16 = false;
  add_common(synth);
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--n-classes", sc.n_classes, "class count");
  synth->add_option("--train", sc.train, "train clips");
  synth->add_option("--dev", sc.dev, "dev clips");
  synth->add_option("--eval", sc.eval, "eval clips");
  synth->add_option("--unlabeled", sc.unlabeled, "unlabeled clips");
  synth->add_option("--clip-s", sc.clip_s, "clip length in seconds");
  synth->add_flag("--pcm16", pcm16, "write 16-bit PCM instead of float32");
  synth->callback([&] { run = [&] { return cmd_synth(co, sc, synth_out, pcm16); }; });

  auto* feat = app.add_subcommand("featurize", "compute log mel features for a manifest");
  std::string feat_manifest, feat_out;
  add_common(feat);
  feat->add_option("--manifest", feat_manifest)->required()->check(CLI::ExistingFile);
  feat->add_option("--out", feat_out, "feature archive")->required();
  feat->callback([&] { run = [&] { return cmd_featurize(co, feat_manifest, feat_out); }; });

  TrainIO tio;
  auto add_train_io = [&](CLI::App* c) {
    add_common(c);
    c->add_option("--train", tio.train, "training manifest")->required()->check(CLI::ExistingFile);
    c->add_option("--train-features", tio.train_features)->check(CLI::ExistingFile);
    c->add_option("--dev", tio.dev, "dev manifest for model selection")->check(CLI::ExistingFile);
    c->add_option("--dev-features", tio.dev_features)->check(CLI::ExistingFile);
    c->add_option("--out", tio.out, "weights file")->required();
    c->add_option("--log", tio.log_file, "per-epoch log (default: <out>.log.jsonl)");
  };
  auto* train = app.add_subcommand("train", "train a DenseNet (or an ensemble of them)");
  add_train_io(train);
  train->callback([&] { run = [&] { return cmd_train(co, tio); }; });

  auto* tri = app.add_subcommand("tri-train", "tri-training with consensus pseudo-labels");
  std::string unl, unl_features, pools_dir;
  add_train_io(tri);
  tri->add_option("--unlabeled", unl, "unlabeled manifest")->required()->check(CLI::ExistingFile);
  tri->add_option("--unlabeled-features", unl_features)->check(CLI::ExistingFile);
  tri->add_option("--pools-dir", pools_dir, "write each round's pseudo-labels here");
  tri->callback([&] { run = [&] { return cmd_tri_train(co, tio, unl, unl_features, pools_dir); }; });

  InferIO iio;
  auto add_infer_io = [&](CLI::App* c, const char* manifest_flag) {
    add_common(c);
    c->add_option("--weights", iio.weights)->required()->check(CLI::ExistingFile);
    c->add_option(manifest_flag, iio.manifest)->required()->check(CLI::ExistingFile);
    c->add_option("--features", iio.features)->check(CLI::ExistingFile);
    c->add_option("--out", iio.out)->required();
  };
  auto* tags = app.add_subcommand("infer-tags", "predict clip-level tags");
  add_infer_io(tags, "--manifest");
  tags->add_option("--thresholds", iio.thresholds, "per-class thresholds (JSON)")->check(CLI::ExistingFile);
  tags->add_option("--threshold", iio.threshold, "uniform tagging threshold without --thresholds");
  tags->callback([&] { run = [&] { return cmd_infer(co, iio, false); }; });

  auto* events = app.add_subcommand("infer-events", "predict tags and event intervals");
  add_infer_io(events, "--manifest");
  events->add_option("--thresholds", iio.thresholds, "per-class thresholds (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  events->callback([&] { run = [&] { return cmd_infer(co, iio, true); }; });

  auto* tune = app.add_subcommand("tune-thresholds", "search per-class thresholds on a dev set");
  std::string objective;
  add_infer_io(tune, "--dev");
  tune->add_option("--objective", objective, "tagging, segment or event (default from config)");
  tune->callback([&] { run = [&] { return cmd_tune(co, iio, objective); }; });

  auto* eval = app.add_subcommand("evaluate", "score predictions against a reference manifest");
  EvalIO eio;
  add_common(eval);
  eval->add_option("--pred", eio.pred)->required()->check(CLI::ExistingFile);
  eval->add_option("--ref", eio.ref)->required()->check(CLI::ExistingFile);
  eval->add_option("--metric", eio.metric, "clip, segment or event");
  eval->add_option("--segment-s", eio.segment_s, "segment length");
  eval->add_option("--collar-s", eio.collar_s, "onset collar");
  eval->add_option("--offset-pct", eio.offset_pct, "offset collar as a fraction of the reference length");
  eval->add_option("--out", eio.out, "text report");
  eval->add_option("--json", eio.json_out, "JSON report");
  eval->callback([&] { run = [&] { return cmd_evaluate(co, eio); }; });

  auto* aug = app.add_subcommand("augment", "add shifted and mixed clips up to a target count");
  std::string aug_manifest, aug_out;
  std::optional<std::size_t> aug_target;
  add_common(aug);
  aug->add_option("--manifest", aug_manifest)->required()->check(CLI::ExistingFile);
  aug->add_option("--out", aug_out, "output manifest; derived audio goes beside it")->required();
  aug->add_option("--target", aug_target, "final record count (default: augment_target)");
  aug->add_flag("--pcm16", pcm16, "write 16-bit PCM instead of float32");
  aug->callback([&] { run = [&] { return cmd_augment(co, aug_manifest, aug_out, aug_target, pcm16); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  try {
    return run();
  } catch (const wsaed::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
