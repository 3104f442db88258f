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

// Run configuration: a named preset, then a flat `key = value` file, then
// command-line overrides, each layer replacing keys of the one before.
//
//   dcase2017  DenseNet-63, lr 0.01, batch 200, early stop after 20 epochs
//              without dev improvement, 10 finetune epochs at 0.001,
//              5-model ensemble
//   dcase2018  DenseNet-120, lr 0.001 halved every 10 epochs for 30 epochs,
//              batch 48, best of 30 epochs by dev clip F1, tri-training and
//              augmentation to 3,578 clips

#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsaed/metrics.hpp"
#include "wsaed/rng.hpp"
#include "wsaed/train.hpp"
#include "wsaed/tri_training.hpp"

namespace wsaed {

using KeyValues = std::map<std::string, std::string>;

inline KeyValues preset_values(const std::string& name) {
  if (name == "dcase2017")
    return {{"arch", "densenet63"},       {"lr", "0.01"},           {"schedule", "fixed_finetune"},
            {"batch_size", "200"},        {"patience", "20"},       {"finetune_epochs", "10"},
            {"finetune_lr", "0.001"},     {"max_epochs", "100"},    {"ensemble", "5"},
            {"augment_target", "0"},      {"objective", "segment"}};
  if (name == "dcase2018")
    return {{"arch", "densenet120"},      {"lr", "0.001"},          {"schedule", "halve"},
            {"batch_size", "48"},         {"patience", "0"},        {"finetune_epochs", "0"},
            {"halve_every", "10"},        {"max_epochs", "30"},     {"ensemble", "1"},
            {"augment_target", "3578"},   {"objective", "event"}};
  throw ValidationError("unknown preset '" + name + "' (expected dcase2017 or dcase2018)");
}

// Every recognized key. Recipe keys start at their dcase2017 values so a
// preset only has to name what it changes.
inline const KeyValues& default_values() {
  static const KeyValues d = [] {
    KeyValues kv{
        {"preset", "dcase2017"}, {"growth_rate", ""},   {"block_layers", ""},    {"init_features", ""},
        {"n_mels", "64"},        {"normalize", "false"}, {"ghost_batch", "50"},  {"halve_every", "10"},
        {"weight_decay", "0"},   {"grad_clip_norm", "0"}, {"select_threshold", "0.5"}, {"seed", "1"},
        {"tau", "0.9"},          {"rounds", "2"},        {"from_scratch", "false"}, {"parallel", "true"},
        {"segment_s", "1.0"},    {"collar_s", "0.2"},    {"offset_fraction", "0.2"}, {"augment_seed", "1"}};
    for (const auto& [k, v] : preset_values("dcase2017")) kv[k] = v;
    return kv;
  }();
  return d;
}

// `key = value` lines; '#' starts a comment.
inline KeyValues parse_key_values(std::istream& in, const std::string& what) {
  KeyValues out;
  std::string line;
  std::size_t n = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    WSAED_CHECK(eq != std::string::npos, what, ":", n, ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    WSAED_CHECK(!key.empty(), what, ":", n, ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

inline KeyValues load_key_values(const fs::path& path) {
  std::ifstream in(path);
  WSAED_CHECK(in, "cannot open config file '", path.string(), "'");
  return parse_key_values(in, path.string());
}

struct RunConfig {
  std::string preset;
  TrainConfig train;
  std::size_t ensemble = 1;
  TriConfig tri;
  std::size_t augment_target = 0;
  std::uint64_t augment_seed = 1;
  Objective objective = Objective::kSegment;
  double segment_s = 1.0;
  EventMatchConfig event;
  LfbeConfig features;
  KeyValues resolved;  // every key after layering, for the record

  std::uint64_t hash() const {
    std::string s;
    for (const auto& [k, v] : resolved) s += k + "=" + v + "\n";
    return fnv1a(s);
  }
  nlohmann::json to_json() const { return resolved; }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw ValidationError("config key '" + key + "': expected a number, got '" + v + "'");
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long u = std::stoull(v, &used);
      if (used == v.size()) return u;
    }
  } catch (const std::exception&) {
  }
  throw ValidationError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError("config key '" + key + "': expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, item));
  return out;
}

}  // namespace detail

// Layers: defaults, preset, file, overrides. The preset is taken from the
// highest layer that names one.
inline RunConfig resolve_config(const KeyValues& file, const KeyValues& overrides, std::size_t n_classes) {
  KeyValues kv = default_values();
  std::string preset = kv["preset"];
  if (file.count("preset")) preset = file.at("preset");
  if (overrides.count("preset")) preset = overrides.at("preset");
  for (const auto& [k, v] : preset_values(preset)) kv[k] = v;
  kv["preset"] = preset;
  for (const auto* layer : {&file, &overrides})
    for (const auto& [k, v] : *layer) {
      WSAED_CHECK(kv.count(k), "unknown config key '", k, "'");
      kv[k] = v;
    }

  using namespace detail;
  RunConfig rc;
  rc.preset = preset;
  auto u = [&](const char* k) { return parse_uint(k, kv.at(k)); };
  auto d = [&](const char* k) { return parse_double(k, kv.at(k)); };
  auto b = [&](const char* k) { return parse_bool(k, kv.at(k)); };

  TrainConfig& t = rc.train;
  t.arch = ArchSpec::by_name(kv.at("arch"), n_classes);
  if (!kv.at("growth_rate").empty()) t.arch = t.arch.with_growth(u("growth_rate"));
  if (!kv.at("init_features").empty()) t.arch.init_features = u("init_features");
  if (!kv.at("block_layers").empty()) t.arch.block_layers = parse_list("block_layers", kv.at("block_layers"));
  t.arch.n_mels = u("n_mels");
  const std::string sched = kv.at("schedule");
  WSAED_CHECK(sched == "fixed_finetune" || sched == "halve", "config key 'schedule': expected fixed_finetune or halve, got '",
              sched, "'");
  t.schedule = sched == "halve" ? Schedule::kHalving : Schedule::kFixedFinetune;
  t.lr = d("lr");
  t.batch_size = u("batch_size");
  t.ghost_batch = u("ghost_batch");
  t.max_epochs = u("max_epochs");
  t.patience = u("patience");
  t.finetune_epochs = u("finetune_epochs");
  t.finetune_lr = d("finetune_lr");
  t.halve_every = u("halve_every");
  t.weight_decay = d("weight_decay");
  t.grad_clip_norm = d("grad_clip_norm");
  t.select_threshold = d("select_threshold");
  t.seed = u("seed");
  t.validate();

  rc.ensemble = u("ensemble");
  WSAED_CHECK(rc.ensemble >= 1, "config key 'ensemble' must be >= 1");
  rc.tri.tau = d("tau");
  rc.tri.rounds = u("rounds");
  rc.tri.from_scratch = b("from_scratch");
  rc.tri.parallel = b("parallel");
  rc.tri.seeds = {derive_seed(t.seed, "tri-model", 0), derive_seed(t.seed, "tri-model", 1),
                  derive_seed(t.seed, "tri-model", 2)};
  rc.tri.validate();
  rc.augment_target = u("augment_target");
  rc.augment_seed = u("augment_seed");
  rc.objective = parse_objective(kv.at("objective"));
  rc.segment_s = d("segment_s");
  WSAED_CHECK(rc.segment_s > 0.0, "config key 'segment_s' must be positive");
  rc.event.onset_collar_s = d("collar_s");
  rc.event.offset_pct = d("offset_fraction");
  rc.features.n_mels = t.arch.n_mels;
  rc.features.normalize = b("normalize");
  rc.resolved = kv;
  return rc;
}

// Seed of ensemble member m; member 0 uses the run seed itself.
inline std::uint64_t member_seed(std::uint64_t seed, std::size_t m) {
  return m == 0 ? seed : derive_seed(seed, "member", m);
}

}  // namespace wsaed
