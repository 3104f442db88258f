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

// Tri-training: three models that differ only in their init seed label
// unlabeled clips for each other. A class joins model i's pseudo-label for
// a clip when both other models give it probability >= tau.
//
// The orchestration is generic over a Learner:
//   Model train(const std::vector<Example>&, std::uint64_t seed, const Model* init)
//   std::vector<std::vector<float>> probs(Model&, const std::vector<Example>&)
// The unlabeled clips' labels are never read; they are cleared on entry.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "wsaed/rng.hpp"
#include "wsaed/train.hpp"

namespace wsaed {

struct PseudoLabel {
  std::string clip_id;
  std::set<std::size_t> labels;
  std::map<std::size_t, std::pair<float, float>> confidences;  // class -> (model j, model k)
  std::size_t round = 0;
  std::array<std::size_t, 2> models{};  // contributing model ids

  bool operator==(const PseudoLabel&) const = default;
};

// Per-class agreement of models j and k on each clip; clips with no
// agreeing class are skipped.
inline std::vector<PseudoLabel> consensus_labels(const std::vector<std::vector<float>>& probs_j,
                                                 const std::vector<std::vector<float>>& probs_k,
                                                 const std::vector<std::string>& ids, double tau,
                                                 std::size_t round = 0, std::array<std::size_t, 2> models = {}) {
  WSAED_CHECK(tau > 0.5 && tau <= 1.0, "consensus threshold must be in (0.5, 1], got ", tau);
  WSAED_CHECK(probs_j.size() == ids.size() && probs_k.size() == ids.size(), "consensus inputs disagree in length");
  std::vector<PseudoLabel> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    WSAED_CHECK(probs_j[i].size() == probs_k[i].size(), "models disagree on the class count");
    PseudoLabel p{ids[i], {}, {}, round, models};
    for (std::size_t c = 0; c < probs_j[i].size(); ++c)
      if (probs_j[i][c] >= tau && probs_k[i][c] >= tau) {
        p.labels.insert(c);
        p.confidences[c] = {probs_j[i][c], probs_k[i][c]};
      }
    if (!p.labels.empty()) out.push_back(std::move(p));
  }
  return out;
}

struct TriConfig {
  double tau = 0.9;
  std::size_t rounds = 2;  // round 0 is supervised; each further round pseudo-labels
  bool from_scratch = false;
  bool parallel = true;    // train the three models on separate threads
  std::array<std::uint64_t, 3> seeds{1, 2, 3};

  void validate() const {
    WSAED_CHECK(rounds >= 1, "tri-training needs at least one round");
    WSAED_CHECK(tau > 0.5 && tau <= 1.0, "tau must be in (0.5, 1], got ", tau);
    WSAED_CHECK(seeds[0] != seeds[1] && seeds[1] != seeds[2] && seeds[0] != seeds[2],
                "the three models need distinct seeds");
  }
};

template <typename Model>
struct TriState {
  std::array<std::optional<Model>, 3> supervised;  // round-0 snapshots
  std::array<std::optional<Model>, 3> models;      // latest round
  std::vector<std::array<std::vector<PseudoLabel>, 3>> pools;  // per pseudo-label round
  std::size_t round = 0;

  // Supervised members first, then tri-trained ones.
  std::vector<Model*> ensemble() {
    std::vector<Model*> out;
    for (auto& m : supervised) out.push_back(&*m);
    if (round > 0)
      for (auto& m : models) out.push_back(&*m);
    return out;
  }
};

namespace detail {

template <typename Fn>
void run_three(bool parallel, Fn&& fn) {
  if (!parallel) {
    for (std::size_t i = 0; i < 3; ++i) fn(i);
    return;
  }
  std::array<std::exception_ptr, 3> errors{};
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < 3; ++i)
    threads.emplace_back([&, i] {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

using PoolCallback = std::function<void(std::size_t round, std::size_t model, const std::vector<PseudoLabel>&)>;

template <typename Learner>
auto tri_train(Learner& learner, const std::vector<Example>& labeled, std::vector<Example> unlabeled,
               const TriConfig& cfg, const PoolCallback& on_pool = {}) {
  using Model = std::decay_t<decltype(learner.train(labeled, std::uint64_t{}, nullptr))>;
  cfg.validate();
  WSAED_CHECK(!labeled.empty(), "tri-training needs labeled clips");
  for (auto& x : unlabeled) x.labels.clear();
  std::vector<std::string> ids;
  for (const auto& x : unlabeled) ids.push_back(x.id);

  TriState<Model> st;
  detail::run_three(cfg.parallel, [&](std::size_t i) {
    st.models[i] = learner.train(labeled, derive_seed(cfg.seeds[i], "tri", 0), nullptr);
  });
  for (std::size_t i = 0; i < 3; ++i) st.supervised[i] = *st.models[i];

  for (std::size_t r = 1; r < cfg.rounds && !unlabeled.empty(); ++r) {
    // Barrier: every model labels with the previous round's weights.
    std::array<std::vector<std::vector<float>>, 3> probs;
    for (std::size_t i = 0; i < 3; ++i) probs[i] = learner.probs(*st.models[i], unlabeled);
    std::array<std::vector<PseudoLabel>, 3> pools;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t j = (i + 1) % 3, k = (i + 2) % 3;
      pools[i] = consensus_labels(probs[std::min(j, k)], probs[std::max(j, k)], ids, cfg.tau, r,
                                  {std::min(j, k), std::max(j, k)});
      if (on_pool) on_pool(r, i, pools[i]);
    }
    st.pools.push_back(pools);
    std::map<std::string, const Example*> by_id;
    for (const auto& x : unlabeled) by_id[x.id] = &x;
    detail::run_three(cfg.parallel, [&](std::size_t i) {
      std::vector<Example> data = labeled;
      for (const auto& p : pools[i]) {
        Example x = *by_id.at(p.clip_id);
        x.labels = p.labels;
        data.push_back(std::move(x));
      }
      const Model* init = cfg.from_scratch ? nullptr : &*st.supervised[i];
      st.models[i] = learner.train(data, derive_seed(cfg.seeds[i], "tri", r), init);
    });
    st.round = r;
  }
  return st;
}

// Learner backed by train_model. Model selection uses `dev`.
struct DenseNetLearner {
  TrainConfig config;
  std::vector<Example> dev;
  EpochCallback on_epoch;

  ModelWeights<float> train(const std::vector<Example>& data, std::uint64_t seed,
                            const ModelWeights<float>* init) const {
    TrainConfig c = config;
    c.seed = seed;
    return train_model(data, dev, c, init, on_epoch).model;
  }

  std::vector<std::vector<float>> probs(ModelWeights<float>& m, const std::vector<Example>& xs) const {
    return predict_probs(m, xs);
  }
};

inline std::vector<ClipRecord> pool_records(const std::vector<PseudoLabel>& pool,
                                            const std::map<std::string, ClipRecord>& originals) {
  std::vector<ClipRecord> out;
  for (const auto& p : pool) {
    ClipRecord r = originals.at(p.clip_id);
    r.weak = p.labels;
    r.strong.reset();
    r.split = "train";
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace wsaed
