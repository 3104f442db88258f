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

// Dataset manifests and tensor persistence.
//
// A manifest is JSON lines, one clip per line:
//   {"id": "...", "path": "audio/x.wav", "weak": ["dog"],
//    "strong": [{"label": "dog", "onset": 0.5, "offset": 1.25}],
//    "split": "train", "derived_from": {...}, "duration": 4.0}
// `strong`, `derived_from` and `duration` are optional. Relative paths
// resolve against the manifest's directory. Class names map to ids through
// a vocabulary file with one name per line.
//
// Archives hold named float32 tensors:
//   "WSAEDARC" | u32 version | u64 header bytes | JSON header | tensor data
// The header lists kind, free-form meta and each tensor's name, shape and
// byte offset into the data section. Weights, features and activation maps
// all use this container.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsaed/cam.hpp"
#include "wsaed/metrics.hpp"
#include "wsaed/wav.hpp"

namespace wsaed {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Class vocabulary

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      WSAED_CHECK(!names_[i].empty(), "empty class name at position ", i);
      WSAED_CHECK(index_.emplace(names_[i], i).second, "duplicate class name '", names_[i], "'");
    }
  }

  static Vocabulary load(const fs::path& path) {
    std::ifstream in(path);
    WSAED_CHECK(in, "cannot open class list '", path.string(), "'");
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (!line.empty()) names.push_back(line);
    }
    WSAED_CHECK(!names.empty(), "class list '", path.string(), "' is empty");
    return Vocabulary(std::move(names));
  }

  void save(const fs::path& path) const {
    std::string s;
    for (const auto& n : names_) s += n + "\n";
    detail::write_file_atomic(path, s);
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t id) const { return names_.at(id); }
  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? std::nullopt : std::optional<std::size_t>(it->second);
  }
  bool operator==(const Vocabulary& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Manifest records

// How a derived clip was made from originals.
struct Provenance {
  std::string op;                    // "shift" or "mix"
  std::vector<std::string> sources;  // original clip ids
  std::size_t shift = 0;             // samples, for "shift"
  std::vector<double> gains;         // per source, for "mix"
  std::uint64_t seed = 0;

  bool operator==(const Provenance&) const = default;
};

struct ClipRecord {
  std::string id;
  std::string path;
  std::set<std::size_t> weak;
  std::optional<std::vector<EventInterval>> strong;
  std::string split;
  std::optional<Provenance> derived_from;
  std::optional<double> duration;

  bool operator==(const ClipRecord&) const = default;
};

inline const std::set<std::string>& known_splits() {
  static const std::set<std::string> s{"train", "dev", "eval", "unlabeled"};
  return s;
}

inline nlohmann::json record_to_json(const ClipRecord& r, const Vocabulary& vocab) {
  nlohmann::json j;
  j["id"] = r.id;
  j["path"] = r.path;
  j["weak"] = nlohmann::json::array();
  for (auto c : r.weak) j["weak"].push_back(vocab.name(c));
  if (r.strong) {
    j["strong"] = nlohmann::json::array();
    for (const auto& e : *r.strong)
      j["strong"].push_back({{"label", vocab.name(e.class_id)}, {"onset", e.onset}, {"offset", e.offset}});
  }
  j["split"] = r.split;
  if (r.derived_from) {
    const auto& p = *r.derived_from;
    nlohmann::json d{{"op", p.op}, {"sources", p.sources}, {"seed", p.seed}};
    if (p.op == "shift") d["shift"] = p.shift;
    if (!p.gains.empty()) d["gains"] = p.gains;
    j["derived_from"] = d;
  }
  if (r.duration) j["duration"] = *r.duration;
  return j;
}

// Throws ValidationError naming the field; callers add the line number.
inline ClipRecord record_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
  WSAED_CHECK(j.is_object(), "expected a JSON object");
  auto str = [&](const char* key) {
    WSAED_CHECK(j.contains(key) && j[key].is_string(), "missing or non-string field '", key, "'");
    return j[key].get<std::string>();
  };
  auto class_id = [&](const nlohmann::json& v) {
    WSAED_CHECK(v.is_string(), "class labels must be strings");
    auto id = vocab.find(v.get<std::string>());
    WSAED_CHECK(id.has_value(), "unknown class '", v.get<std::string>(), "'");
    return *id;
  };
  ClipRecord r;
  r.id = str("id");
  WSAED_CHECK(!r.id.empty(), "empty clip id");
  r.path = str("path");
  r.split = str("split");
  WSAED_CHECK(known_splits().count(r.split), "unknown split '", r.split, "' (train, dev, eval or unlabeled)");
  WSAED_CHECK(j.contains("weak") && j["weak"].is_array(), "missing or non-array field 'weak'");
  for (const auto& v : j["weak"]) r.weak.insert(class_id(v));
  if (j.contains("duration")) {
    WSAED_CHECK(j["duration"].is_number() && j["duration"].get<double>() > 0.0, "duration must be a positive number");
    r.duration = j["duration"].get<double>();
  }
  if (j.contains("strong")) {
    WSAED_CHECK(j["strong"].is_array(), "field 'strong' must be an array");
    std::vector<EventInterval> events;
    for (const auto& e : j["strong"]) {
      WSAED_CHECK(e.is_object() && e.contains("label") && e.contains("onset") && e.contains("offset") &&
                      e["onset"].is_number() && e["offset"].is_number(),
                  "strong label needs label, onset and offset");
      EventInterval ev{class_id(e["label"]), e["onset"].get<double>(), e["offset"].get<double>()};
      WSAED_CHECK(ev.onset >= 0.0 && ev.onset < ev.offset, "strong label '", vocab.name(ev.class_id),
                  "' needs 0 <= onset < offset, got [", ev.onset, ", ", ev.offset, "]");
      WSAED_CHECK(r.weak.count(ev.class_id), "strong label '", vocab.name(ev.class_id),
                  "' is not among the weak labels");
      if (r.duration)
        WSAED_CHECK(ev.offset <= *r.duration + kTimeEps, "strong label '", vocab.name(ev.class_id),
                    "' ends at ", ev.offset, " past the clip duration ", *r.duration);
      events.push_back(ev);
    }
    r.strong = std::move(events);
  }
  if (j.contains("derived_from")) {
    const auto& d = j["derived_from"];
    WSAED_CHECK(d.is_object() && d.contains("op") && d.contains("sources"), "derived_from needs op and sources");
    Provenance p;
    p.op = d["op"].get<std::string>();
    p.sources = d["sources"].get<std::vector<std::string>>();
    if (d.contains("shift")) p.shift = d["shift"].get<std::size_t>();
    if (d.contains("gains")) p.gains = d["gains"].get<std::vector<double>>();
    if (d.contains("seed")) p.seed = d["seed"].get<std::uint64_t>();
    r.derived_from = std::move(p);
  }
  return r;
}

inline std::vector<ClipRecord> parse_manifest(std::istream& in, const Vocabulary& vocab,
                                              const std::string& what = "manifest") {
  std::vector<ClipRecord> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what());
      }
      ClipRecord r = record_from_json(j, vocab);
      WSAED_CHECK(ids.insert(r.id).second, "duplicate clip id '", r.id, "'");
      out.push_back(std::move(r));
    } catch (const ValidationError& e) {
      throw ValidationError(what + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(what + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<ClipRecord> load_manifest(const fs::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  WSAED_CHECK(in, "cannot open manifest '", path.string(), "'");
  return parse_manifest(in, vocab, path.string());
}

inline std::string format_manifest(const std::vector<ClipRecord>& records, const Vocabulary& vocab) {
  std::string s;
  for (const auto& r : records) s += record_to_json(r, vocab).dump() + "\n";
  return s;
}

inline void save_manifest(const fs::path& path, const std::vector<ClipRecord>& records, const Vocabulary& vocab) {
  detail::write_file_atomic(path, format_manifest(records, vocab));
}

// Audio location for a record listed in the manifest at `manifest_path`.
inline fs::path resolve_audio(const fs::path& manifest_path, const ClipRecord& r) {
  const fs::path p(r.path);
  return p.is_absolute() ? p : manifest_path.parent_path() / p;
}

// The clip's duration, read from the WAV header when the manifest omits it.
inline double record_duration(const fs::path& manifest_path, const ClipRecord& r) {
  if (r.duration) return *r.duration;
  return read_wav(resolve_audio(manifest_path, r)).duration_s();
}

// ---------------------------------------------------------------------------
// Tensor archives

inline constexpr char kArchiveMagic[8] = {'W', 'S', 'A', 'E', 'D', 'A', 'R', 'C'};
inline constexpr std::uint32_t kArchiveVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

struct Archive {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t.tensor;
    return nullptr;
  }
  const Tensor<float>& get(const std::string& name) const {
    const auto* t = find(name);
    WSAED_CHECK(t, "archive has no tensor '", name, "'");
    return *t;
  }
};

inline std::string encode_archive(const Archive& a) {
  nlohmann::json header{{"kind", a.kind}, {"meta", a.meta}, {"tensors", nlohmann::json::array()}};
  std::uint64_t offset = 0;
  std::set<std::string> names;
  for (const auto& t : a.tensors) {
    WSAED_CHECK(names.insert(t.name).second, "duplicate tensor name '", t.name, "'");
    header["tensors"].push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"offset", offset}});
    offset += t.tensor.size() * sizeof(float);
  }
  const std::string h = header.dump();
  std::string out(kArchiveMagic, 8);
  detail::put_le<std::uint32_t>(out, kArchiveVersion);
  detail::put_le<std::uint64_t>(out, h.size());
  out += h;
  out.reserve(out.size() + offset);
  for (const auto& t : a.tensors)
    out.append(reinterpret_cast<const char*>(t.tensor.data()), t.tensor.size() * sizeof(float));
  return out;
}

inline Archive decode_archive(const std::vector<unsigned char>& b, const std::string& what = "archive") {
  WSAED_CHECK(b.size() >= 20 && std::memcmp(b.data(), kArchiveMagic, 8) == 0, what, ": not a wsaed archive");
  const auto version = detail::read_le<std::uint32_t>(b.data() + 8);
  WSAED_CHECK(version == kArchiveVersion, what, ": format version ", version, " is not supported (expected ",
              kArchiveVersion, ")");
  const auto hlen = detail::read_le<std::uint64_t>(b.data() + 12);
  WSAED_CHECK(hlen <= b.size() - 20, what, ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(b.begin() + 20, b.begin() + 20 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(what + ": corrupt header: " + e.what());
  }
  Archive a;
  a.kind = header.value("kind", "");
  a.meta = header.value("meta", nlohmann::json::object());
  const std::size_t data0 = 20 + hlen;
  std::uint64_t expected = 0;
  for (const auto& t : header.at("tensors")) {
    NamedTensor nt;
    nt.name = t.at("name").get<std::string>();
    const Shape shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    const std::size_t n = shape_size(shape);
    WSAED_CHECK(offset == expected, what, ": tensor '", nt.name, "' has offset ", offset, ", expected ", expected);
    expected += n * sizeof(float);
    WSAED_CHECK(data0 + expected <= b.size(), what, ": truncated; tensor '", nt.name, "' is incomplete");
    nt.tensor = Tensor<float>::uninitialized(shape);
    if (n) std::memcpy(nt.tensor.data(), b.data() + data0 + offset, n * sizeof(float));
    a.tensors.push_back(std::move(nt));
  }
  WSAED_CHECK(data0 + expected == b.size(), what, ": ", b.size() - data0 - expected, " trailing bytes");
  return a;
}

inline void save_archive(const fs::path& path, const Archive& a) { detail::write_file_atomic(path, encode_archive(a)); }

inline Archive load_archive(const fs::path& path) {
  return decode_archive(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Weights: one or more ensemble members sharing an architecture.

struct WeightsFile {
  ArchSpec arch;
  std::vector<ModelWeights<float>> members;
  nlohmann::json training = nlohmann::json::object();  // seed, epochs, config hash, ...
};

inline Archive weights_archive(const WeightsFile& w) {
  WSAED_CHECK(!w.members.empty(), "no model to save");
  Archive a;
  a.kind = "weights";
  a.meta = {{"arch", w.arch}, {"members", w.members.size()}, {"training", w.training}};
  for (std::size_t m = 0; m < w.members.size(); ++m) {
    WSAED_CHECK(w.members[m].arch == w.arch, "ensemble member ", m, " has a different architecture");
    const std::string prefix = "m" + std::to_string(m) + "/";
    auto& member = const_cast<ModelWeights<float>&>(w.members[m]);
    member.visit([&](const std::string& n, Var<float>& v) { a.tensors.push_back({prefix + n, v.value()}); },
                 [&](const std::string& n, Tensor<float>& t) { a.tensors.push_back({prefix + n, t}); });
  }
  return a;
}

inline void save_weights(const fs::path& path, const WeightsFile& w) { save_archive(path, weights_archive(w)); }

// `expected`, when given, must match the stored architecture.
inline WeightsFile weights_from_archive(const Archive& a, const std::optional<ArchSpec>& expected = std::nullopt,
                                        const std::string& what = "weights") {
  WSAED_CHECK(a.kind == "weights", what, ": archive holds '", a.kind, "', not weights");
  WeightsFile w;
  try {
    w.arch = a.meta.at("arch").get<ArchSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(what + ": bad architecture record: " + e.what());
  }
  if (expected)
    WSAED_CHECK_SHAPE(*expected == w.arch, what, ": shape mismatch, file holds architecture '", w.arch.name,
                "' that differs from the requested one");
  w.training = a.meta.value("training", nlohmann::json::object());
  const std::size_t members = a.meta.value("members", std::size_t{1});
  std::size_t used = 0;
  for (std::size_t m = 0; m < members; ++m) {
    auto model = build_model<float>(w.arch, 0);
    const std::string prefix = "m" + std::to_string(m) + "/";
    auto take = [&](const std::string& n, Tensor<float>& dst) {
      const auto* t = a.find(prefix + n);
      WSAED_CHECK(t, what, ": missing tensor '", prefix + n, "'");
      WSAED_CHECK_SHAPE(t->shape() == dst.shape(), what, ": shape mismatch for '", prefix + n, "': file has ",
                        shape_str(t->shape()), ", architecture needs ", shape_str(dst.shape()));
      dst = *t;
      ++used;
    };
    model.visit([&](const std::string& n, Var<float>& v) { take(n, v.mutable_value()); }, take);
    w.members.push_back(std::move(model));
  }
  WSAED_CHECK(used == a.tensors.size(), what, ": ", a.tensors.size() - used, " unexpected tensors");
  return w;
}

inline WeightsFile load_weights(const fs::path& path, const std::optional<ArchSpec>& expected = std::nullopt) {
  return weights_from_archive(load_archive(path), expected, path.string());
}

}  // namespace wsaed
