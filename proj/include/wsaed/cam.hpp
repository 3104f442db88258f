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

// Class activation maps and event decoding.
//
// With a bias-free classifier, S_c = sum_k w_k^c G_k and G_k = mean(F_k), so
// the map M_c = sum_k w_k^c F_k averages exactly to S_c. Localization takes
// the max of M_c over the feature axis, thresholds it in score space and
// median-filters the resulting mask.

#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"
#include "wsaed/densenet.hpp"

namespace wsaed {

struct ClassActivationMap {
  std::size_t class_id = 0;
  Tensor<float> map;  // [T', N']
  double time_resolution_s = 0.0;
};

struct EventInterval {
  std::size_t class_id = 0;
  double onset = 0.0;
  double offset = 0.0;

  bool operator==(const EventInterval&) const = default;
};

// Seconds per feature-map frame.
inline double time_resolution(const ArchSpec& arch, double frame_shift_s) {
  return frame_shift_s * static_cast<double>(arch.downsample_factor());
}

// F: [K, T', N'], weights: the K classifier weights of class c.
inline ClassActivationMap compute_cam(const Tensor<float>& feature_map, std::span<const float> weights,
                                      std::size_t class_id, double time_resolution_s) {
  WSAED_CHECK_SHAPE(feature_map.rank() == 3, "feature map must be [K,T',N'], got ",
                    shape_str(feature_map.shape()));
  const std::size_t K = feature_map.dim(0), T = feature_map.dim(1), N = feature_map.dim(2);
  WSAED_CHECK_SHAPE(weights.size() == K, "feature map has ", K, " channels but ", weights.size(),
                    " weights were given");
  ClassActivationMap cam{class_id, Tensor<float>({T, N}), time_resolution_s};
  std::vector<double> acc(T * N, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double wk = weights[k];
    const float* f = feature_map.data() + k * T * N;
    for (std::size_t i = 0; i < T * N; ++i) acc[i] += wk * f[i];
  }
  for (std::size_t i = 0; i < T * N; ++i) cam.map[i] = static_cast<float>(acc[i]);
  return cam;
}

inline ClassActivationMap compute_cam(const ForwardOutput& out, const ModelWeights<float>& w, std::size_t class_id,
                                      double time_resolution_s) {
  const std::size_t K = w.classifier.shape()[1];
  WSAED_CHECK(class_id < w.arch.n_classes, "class ", class_id, " out of range");
  std::span<const float> row(w.classifier.value().data() + class_id * K, K);
  return compute_cam(out.feature_map, row, class_id, time_resolution_s);
}

// out[t] = max_n M_c[t, n]
inline std::vector<float> cam_to_sequence(const ClassActivationMap& cam) {
  WSAED_CHECK(!cam.map.empty(), "empty activation map");
  const std::size_t T = cam.map.dim(0), N = cam.map.dim(1);
  std::vector<float> seq(T);
  for (std::size_t t = 0; t < T; ++t) {
    const float* row = cam.map.data() + t * N;
    seq[t] = *std::max_element(row, row + N);
  }
  return seq;
}

inline std::vector<int> binarize(std::span<const float> seq, double th_f) {
  std::vector<int> mask(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) mask[i] = seq[i] >= th_f ? 1 : 0;
  return mask;
}

// Binary median filter; indices past either end replicate the edge value.
inline std::vector<int> median_filter(const std::vector<int>& mask, std::size_t len) {
  WSAED_CHECK(len % 2 == 1, "median filter length must be odd, got ", len);
  if (len == 1 || mask.empty()) return mask;
  const auto half = static_cast<std::ptrdiff_t>(len / 2);
  const auto n = static_cast<std::ptrdiff_t>(mask.size());
  std::vector<int> out(mask.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    std::size_t ones = 0;
    for (std::ptrdiff_t j = i - half; j <= i + half; ++j) ones += mask[std::clamp<std::ptrdiff_t>(j, 0, n - 1)];
    out[i] = 2 * ones > len ? 1 : 0;
  }
  return out;
}

// Each maximal run of ones [i..j] becomes (i * res, (j + 1) * res).
inline std::vector<EventInterval> mask_to_events(const std::vector<int>& mask, double res,
                                                 std::size_t class_id = 0) {
  std::vector<EventInterval> events;
  for (std::size_t i = 0; i < mask.size();) {
    if (!mask[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < mask.size() && mask[j + 1]) ++j;
    events.push_back({class_id, static_cast<double>(i) * res, static_cast<double>(j + 1) * res});
    i = j + 1;
  }
  return events;
}

inline std::vector<EventInterval> decode_events(std::span<const float> seq, double th_f, std::size_t median_len,
                                                double time_resolution_s, std::size_t class_id = 0) {
  WSAED_CHECK(median_len >= 1, "median filter length must be at least 1");
  return mask_to_events(median_filter(binarize(seq, th_f), median_len), time_resolution_s, class_id);
}

struct ClassThreshold {
  double th_u = 0.5;           // on y_c, strictly greater tags the clip
  double th_f = 0.0;           // on the CAM sequence, in score space
  std::size_t median_len = 1;  // odd

  bool operator==(const ClassThreshold&) const = default;
};

struct ThresholdSet {
  std::vector<ClassThreshold> classes;

  static ThresholdSet uniform(std::size_t n_classes, ClassThreshold t = {}) {
    return {std::vector<ClassThreshold>(n_classes, t)};
  }

  void validate() const {
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const auto& t = classes[c];
      WSAED_CHECK(t.th_u > 0.0 && t.th_u < 1.0, "class ", c, ": th_u must lie in (0,1), got ", t.th_u);
      WSAED_CHECK(t.median_len % 2 == 1, "class ", c, ": median length must be odd, got ", t.median_len);
    }
  }

  bool operator==(const ThresholdSet&) const = default;
};

inline void to_json(nlohmann::json& j, const ThresholdSet& t) {
  j = nlohmann::json::array();
  for (const auto& c : t.classes) j.push_back({{"th_u", c.th_u}, {"th_f", c.th_f}, {"median_len", c.median_len}});
}

inline void from_json(const nlohmann::json& j, ThresholdSet& t) {
  WSAED_CHECK(j.is_array(), "threshold file must hold a JSON array");
  t.classes.clear();
  for (const auto& e : j) {
    ClassThreshold c;
    e.at("th_u").get_to(c.th_u);
    e.at("th_f").get_to(c.th_f);
    e.at("median_len").get_to(c.median_len);
    t.classes.push_back(c);
  }
  t.validate();
}

// What localization needs from one clip: probabilities and one CAM
// sequence per class. Ensembles average these member-wise.
struct ClipScores {
  std::vector<float> probs;
  std::vector<std::vector<float>> sequences;
  double time_resolution_s = 0.0;
};

inline ClipScores clip_scores(const ForwardOutput& out, const ModelWeights<float>& w, double time_resolution_s) {
  ClipScores s{out.probs, {}, time_resolution_s};
  for (std::size_t c = 0; c < w.arch.n_classes; ++c)
    s.sequences.push_back(cam_to_sequence(compute_cam(out, w, c, time_resolution_s)));
  return s;
}

struct Prediction {
  std::vector<std::size_t> tags;
  std::vector<EventInterval> events;  // grouped by class, each group sorted by onset
};

inline Prediction predict(const ClipScores& s, const ThresholdSet& thresholds) {
  WSAED_CHECK(thresholds.classes.size() == s.probs.size(), "thresholds cover ", thresholds.classes.size(),
              " classes, model has ", s.probs.size());
  Prediction p;
  for (std::size_t c = 0; c < s.probs.size(); ++c) {
    const auto& t = thresholds.classes[c];
    if (!(s.probs[c] > t.th_u)) continue;
    p.tags.push_back(c);
    if (c < s.sequences.size()) {
      auto ev = decode_events(s.sequences[c], t.th_f, t.median_len, s.time_resolution_s, c);
      p.events.insert(p.events.end(), ev.begin(), ev.end());
    }
  }
  return p;
}

}  // namespace wsaed
