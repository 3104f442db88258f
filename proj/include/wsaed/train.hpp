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

// Supervised training on weak labels, ensemble inference and featurization.
//
// One optimizer step covers `batch_size` clips. Each step is computed as
// ghost batches of at most `ghost_batch` clips: batch norm sees the ghost
// batch statistics, and gradients of the per-ghost losses (weighted by
// ghost size) accumulate before the single ADAM update. With ghost_batch
// >= batch_size this is ordinary minibatch training.

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "wsaed/adam.hpp"
#include "wsaed/cam.hpp"
#include "wsaed/corpus.hpp"
#include "wsaed/densenet.hpp"
#include "wsaed/metrics.hpp"
#include "wsaed/rng.hpp"
#include "wsaed/signal_features.hpp"

namespace wsaed {

// ---------------------------------------------------------------------------
// Featurized clips

struct Example {
  std::string id;
  Spectrogram spec;
  std::set<std::size_t> labels;
};

inline std::vector<Example> featurize(const fs::path& manifest, const std::vector<ClipRecord>& records,
                                      const LfbeConfig& cfg) {
  std::vector<Example> out;
  out.reserve(records.size());
  std::map<int, LfbeExtractor> extractors;  // one per sample rate
  for (const auto& r : records) {
    AudioClip clip = read_wav(resolve_audio(manifest, r));
    auto it = extractors.find(clip.sample_rate);
    if (it == extractors.end()) it = extractors.emplace(clip.sample_rate, LfbeExtractor(clip.sample_rate, cfg)).first;
    out.push_back({r.id, it->second(clip), r.weak});
  }
  return out;
}

// Feature archive: one [T, N] tensor per clip, named by clip id.
inline Archive features_archive(const std::vector<Example>& xs, const LfbeConfig& cfg) {
  Archive a;
  a.kind = "features";
  a.meta = {{"win_s", cfg.win_s}, {"hop_s", cfg.hop_s}, {"n_mels", cfg.n_mels},
            {"floor_epsilon", cfg.floor_epsilon}, {"normalize", cfg.normalize}};
  if (!xs.empty()) a.meta["frame_shift_s"] = xs[0].spec.frame_shift_s;
  for (const auto& x : xs) a.tensors.push_back({x.id, x.spec.frames});
  return a;
}

// Attaches archived spectrograms to manifest records (labels come from the
// manifest, so one archive serves any labeling of the same clips).
inline std::vector<Example> examples_from_archive(const Archive& a, const std::vector<ClipRecord>& records,
                                                  const std::string& what = "features") {
  WSAED_CHECK(a.kind == "features", what, ": archive holds '", a.kind, "', not features");
  const double shift = a.meta.value("frame_shift_s", a.meta.value("hop_s", 0.01));
  std::vector<Example> out;
  for (const auto& r : records) {
    const auto* t = a.find(r.id);
    WSAED_CHECK(t, what, ": no features for clip '", r.id, "'");
    WSAED_CHECK_SHAPE(t->rank() == 2, what, ": features for '", r.id, "' must be [T, N]");
    out.push_back({r.id, Spectrogram{*t, shift, t->dim(1)}, r.weak});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training configuration

enum class Schedule { kFixedFinetune, kHalving };

struct TrainConfig {
  ArchSpec arch = ArchSpec::densenet63();
  Schedule schedule = Schedule::kFixedFinetune;
  double lr = 0.01;
  std::size_t batch_size = 200;
  std::size_t ghost_batch = 50;
  std::size_t max_epochs = 100;    // main phase cap
  std::size_t patience = 20;       // 0 disables early stopping
  std::size_t finetune_epochs = 10;
  double finetune_lr = 0.001;
  std::size_t halve_every = 10;    // halving schedule only
  double weight_decay = 0.0;
  double grad_clip_norm = 0.0;
  double select_threshold = 0.5;   // dev tagging threshold for model selection
  std::uint64_t seed = 1;

  void validate() const {
    arch.validate();
    WSAED_CHECK(lr > 0.0 && finetune_lr > 0.0, "learning rates must be positive");
    WSAED_CHECK(batch_size >= 1 && ghost_batch >= 1, "batch sizes must be >= 1");
    WSAED_CHECK(max_epochs >= 1, "max_epochs must be >= 1");
    WSAED_CHECK(schedule != Schedule::kHalving || halve_every >= 1, "halve_every must be >= 1");
    WSAED_CHECK(select_threshold > 0.0 && select_threshold < 1.0, "select_threshold must be in (0, 1)");
  }
};

struct EpochLog {
  std::size_t epoch;  // 1-based over both phases
  std::string phase;  // "main" or "finetune"
  double lr;
  double train_loss;
  double dev_f1;      // -1 without dev data
  double seconds;
};

struct TrainResult {
  ModelWeights<float> model;
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;
  double best_dev_f1 = -1.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

namespace detail {

// Pads shorter clips up to the batch maximum with the batch's smallest
// value, i.e. the quietest level present.
inline Var<float> padded_batch(const std::vector<const Example*>& xs) {
  std::size_t T = 0;
  const std::size_t N = xs[0]->spec.n_mels;
  for (const auto* x : xs) {
    WSAED_CHECK_SHAPE(x->spec.n_mels == N, "clips in one batch have different band counts");
    T = std::max(T, x->spec.num_frames());
  }
  float pad = 0.0f;
  bool first = true;
  for (const auto* x : xs)
    for (float v : x->spec.frames.values()) {
      pad = first ? v : std::min(pad, v);
      first = false;
    }
  Tensor<float> t({xs.size(), 1, T, N}, pad);
  for (std::size_t i = 0; i < xs.size(); ++i)
    std::copy(xs[i]->spec.frames.data(), xs[i]->spec.frames.data() + xs[i]->spec.frames.size(),
              t.data() + i * T * N);
  return Var<float>(std::move(t));
}

inline Tensor<float> label_matrix(const std::vector<const Example*>& xs, std::size_t n_classes) {
  Tensor<float> y({xs.size(), n_classes}, 0.0f);
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (auto c : xs[i]->labels) {
      WSAED_CHECK(c < n_classes, "clip '", xs[i]->id, "' has class id ", c, " beyond ", n_classes, " classes");
      y.at(i, c) = 1.0f;
    }
  return y;
}

// Calls `fn(indices)` for same-length groups of at most `chunk` clips,
// keeping the input order inside each group.
template <typename Fn>
void for_each_length_group(const std::vector<Example>& xs, std::size_t chunk, Fn&& fn) {
  std::map<std::size_t, std::vector<std::size_t>> by_len;
  for (std::size_t i = 0; i < xs.size(); ++i) by_len[xs[i].spec.num_frames()].push_back(i);
  for (const auto& [len, idx] : by_len)
    for (std::size_t s = 0; s < idx.size(); s += chunk)
      fn(std::vector<std::size_t>(idx.begin() + s, idx.begin() + std::min(idx.size(), s + chunk)));
}

}  // namespace detail

inline constexpr std::size_t kInferChunk = 32;

// Eval-mode probabilities, one row per example.
inline std::vector<std::vector<float>> predict_probs(ModelWeights<float>& w, const std::vector<Example>& xs) {
  std::vector<std::vector<float>> out(xs.size());
  detail::for_each_length_group(xs, kInferChunk, [&](const std::vector<std::size_t>& idx) {
    std::vector<const Spectrogram*> specs;
    for (auto i : idx) specs.push_back(&xs[i].spec);
    auto outs = infer(w, specs);
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = std::move(outs[k].probs);
  });
  return out;
}

inline TagMap tags_at(const std::vector<Example>& xs, const std::vector<std::vector<float>>& probs, double th) {
  TagMap m;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    auto& s = m[xs[i].id];
    for (std::size_t c = 0; c < probs[i].size(); ++c)
      if (probs[i][c] > th) s.insert(c);
  }
  return m;
}

inline TagMap reference_tags(const std::vector<Example>& xs) {
  TagMap m;
  for (const auto& x : xs) m[x.id] = x.labels;
  return m;
}

inline double dev_clip_f1(ModelWeights<float>& w, const std::vector<Example>& dev, double th) {
  return clip_f1(tags_at(dev, predict_probs(w, dev), th), reference_tags(dev), w.arch.n_classes).total.f1();
}

// Copies parameter values and running statistics, leaving node identity
// (and Adam's parameter list) intact.
inline void copy_weights(ModelWeights<float>& dst, ModelWeights<float>& src) {
  std::vector<Tensor<float>*> from;
  src.visit([&](const std::string&, Var<float>& v) { from.push_back(&v.mutable_value()); },
            [&](const std::string&, Tensor<float>& t) { from.push_back(&t); });
  std::size_t i = 0;
  dst.visit([&](const std::string&, Var<float>& v) { v.mutable_value() = *from[i++]; },
            [&](const std::string&, Tensor<float>& t) { t = *from[i++]; });
}

// One epoch of shuffled minibatches; returns the mean training loss.
inline double train_epoch(ModelWeights<float>& w, AdamState<float>& opt, const std::vector<Example>& train,
                          const TrainConfig& cfg, std::uint64_t shuffle_seed) {
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto params = w.parameters();
  double loss_sum = 0.0;
  for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
    const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
    w.zero_grad();
    for (std::size_t g0 = b0; g0 < b1; g0 += cfg.ghost_batch) {
      const std::size_t g1 = std::min(b1, g0 + cfg.ghost_batch);
      std::vector<const Example*> xs;
      for (std::size_t i = g0; i < g1; ++i) xs.push_back(&train[order[i]]);
      auto fb = forward(w, detail::padded_batch(xs), Mode::kTrain);
      auto loss = bce_with_logits(fb.scores, detail::label_matrix(xs, w.arch.n_classes));
      const double weight = static_cast<double>(g1 - g0) / static_cast<double>(b1 - b0);
      loss_sum += loss.value()[0] * static_cast<double>(g1 - g0);
      backward(loss, static_cast<float>(weight));
    }
    adam_step(std::span<Var<float>>(params), opt);
  }
  return loss_sum / static_cast<double>(std::max<std::size_t>(order.size(), 1));
}

// Trains one model. Model selection keeps the weights with the best dev
// clip F1 at cfg.select_threshold (earliest epoch wins ties); without dev
// data the last epoch is kept.
inline TrainResult train_model(const std::vector<Example>& train, const std::vector<Example>& dev,
                               const TrainConfig& cfg, const ModelWeights<float>* init = nullptr,
                               const EpochCallback& on_epoch = {}) {
  cfg.validate();
  WSAED_CHECK(!train.empty(), "no training clips");
  TrainResult res{init ? init->clone() : build_model<float>(cfg.arch, derive_seed(cfg.seed, "init")), {}, 0, -1.0};
  WSAED_CHECK(res.model.arch == cfg.arch, "initial weights do not match the configured architecture");
  ModelWeights<float>& w = res.model;
  ModelWeights<float> best = w.clone();
  AdamState<float> opt;
  opt.config.lr = cfg.lr;
  opt.config.weight_decay = cfg.weight_decay;
  opt.config.grad_clip_norm = cfg.grad_clip_norm;

  std::size_t epoch = 0;
  auto run_epoch = [&](const char* phase, double lr) {
    ++epoch;
    const auto t0 = std::chrono::steady_clock::now();
    opt.config.lr = lr;
    const double loss = train_epoch(w, opt, train, cfg, derive_seed(cfg.seed, "shuffle", epoch));
    const double f1 = dev.empty() ? -1.0 : dev_clip_f1(w, dev, cfg.select_threshold);
    const bool improved = dev.empty() || f1 > res.best_dev_f1;
    if (improved) {
      copy_weights(best, w);
      res.best_dev_f1 = f1;
      res.best_epoch = epoch;
    }
    EpochLog log{epoch, phase, lr, loss, f1,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    res.history.push_back(log);
    if (on_epoch) on_epoch(log);
    return improved;
  };

  if (cfg.schedule == Schedule::kFixedFinetune) {
    std::size_t since_best = 0;
    for (std::size_t e = 0; e < cfg.max_epochs; ++e) {
      since_best = run_epoch("main", cfg.lr) ? 0 : since_best + 1;
      if (cfg.patience > 0 && since_best >= cfg.patience) break;
    }
    // Finetuning starts from the best weights with a fresh lower rate.
    copy_weights(w, best);
    for (std::size_t e = 0; e < cfg.finetune_epochs; ++e) run_epoch("finetune", cfg.finetune_lr);
  } else {
    for (std::size_t e = 0; e < cfg.max_epochs; ++e) {
      const double lr = cfg.lr * std::pow(0.5, static_cast<double>(e / cfg.halve_every));
      run_epoch("main", lr);
    }
  }
  copy_weights(w, best);
  return res;
}

// ---------------------------------------------------------------------------
// Ensembles

inline void check_members(const std::vector<ModelWeights<float>*>& models) {
  WSAED_CHECK(!models.empty(), "ensemble needs at least one model");
  for (const auto* m : models)
    WSAED_CHECK(m->arch.n_classes == models[0]->arch.n_classes, "ensemble members disagree on the class count (",
                m->arch.n_classes, " vs ", models[0]->arch.n_classes, ")");
}

// Mean probabilities and mean CAM sequences over members. Members with a
// different time resolution are rejected since their sequences do not align.
inline std::vector<ClipScores> ensemble_scores(const std::vector<ModelWeights<float>*>& models,
                                               const std::vector<Example>& xs) {
  check_members(models);
  std::vector<ClipScores> out(xs.size());
  for (std::size_t m = 0; m < models.size(); ++m) {
    ModelWeights<float>& w = *models[m];
    detail::for_each_length_group(xs, kInferChunk, [&](const std::vector<std::size_t>& idx) {
      std::vector<const Spectrogram*> specs;
      for (auto i : idx) specs.push_back(&xs[i].spec);
      auto outs = infer(w, specs);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const double res = time_resolution(w.arch, xs[idx[k]].spec.frame_shift_s);
        ClipScores s = clip_scores(outs[k], w, res);
        ClipScores& acc = out[idx[k]];
        if (m == 0) {
          acc = std::move(s);
          continue;
        }
        WSAED_CHECK(std::abs(acc.time_resolution_s - s.time_resolution_s) < 1e-12 &&
                        acc.sequences[0].size() == s.sequences[0].size(),
                    "ensemble members produce CAM sequences of different resolution");
        for (std::size_t c = 0; c < s.probs.size(); ++c) {
          acc.probs[c] += s.probs[c];
          for (std::size_t t = 0; t < s.sequences[c].size(); ++t) acc.sequences[c][t] += s.sequences[c][t];
        }
      }
    });
  }
  const float inv = 1.0f / static_cast<float>(models.size());
  if (models.size() > 1)
    for (auto& s : out) {
      for (auto& p : s.probs) p *= inv;
      for (auto& seq : s.sequences)
        for (auto& v : seq) v *= inv;
    }
  return out;
}

// Probabilities only (no CAM work): the mean of member outputs.
inline std::vector<std::vector<float>> ensemble_probs(const std::vector<ModelWeights<float>*>& models,
                                                     const std::vector<Example>& xs) {
  check_members(models);
  std::vector<std::vector<float>> acc;
  for (auto* m : models) {
    auto p = predict_probs(*m, xs);
    if (acc.empty()) {
      acc = std::move(p);
      continue;
    }
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t c = 0; c < p[i].size(); ++c) acc[i][c] += p[i][c];
  }
  if (models.size() > 1)
    for (auto& row : acc)
      for (auto& v : row) v /= static_cast<float>(models.size());
  return acc;
}

inline std::vector<ModelWeights<float>*> member_ptrs(std::vector<ModelWeights<float>>& ms) {
  std::vector<ModelWeights<float>*> out;
  for (auto& m : ms) out.push_back(&m);
  return out;
}

}  // namespace wsaed
