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

// DenseNet feature extractor with a GAP + bias-free dense classifier.
//
// Layout, input [B, 1, T, N] (time x mel):
//   conv 7x7 stride 2
//   dense block 1, transition 1, ..., dense block 4
//   BN-ReLU, global average pooling, dense (no bias), sigmoid
// A dense layer is BN-ReLU-Conv1x1 (bottleneck) then BN-ReLU-Conv3x3 whose
// output is concatenated onto its input. A transition is BN-ReLU-Conv1x1
// (compression) followed by 2x2 stride-2 average pooling. Only the first
// `transitions` blocks are followed by a transition, so fewer transitions
// keep more time resolution.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsaed/ops.hpp"
#include "wsaed/signal_features.hpp"

namespace wsaed {

struct ArchSpec {
  std::string name = "densenet63";
  std::vector<std::size_t> block_layers{3, 6, 12, 8};
  std::size_t growth_rate = 32;
  std::size_t bottleneck_factor = 4;
  double compression = 0.5;
  std::size_t init_features = 64;
  std::size_t init_kernel = 7;
  std::size_t init_stride = 2;
  std::size_t transitions = 3;
  std::size_t n_classes = 17;
  std::size_t n_mels = 64;

  static ArchSpec densenet63(std::size_t n_classes = 17) { return ArchSpec{}.with_classes(n_classes); }

  static ArchSpec densenet120(std::size_t n_classes = 10) {
    ArchSpec a;
    a.name = "densenet120";
    a.block_layers = {6, 12, 24, 16};
    a.transitions = 2;
    return a.with_classes(n_classes);
  }

  static ArchSpec by_name(const std::string& name, std::size_t n_classes) {
    if (name == "densenet63") return densenet63(n_classes);
    if (name == "densenet120") return densenet120(n_classes);
    throw ValidationError("unknown architecture '" + name + "' (expected densenet63 or densenet120)");
  }

  ArchSpec with_classes(std::size_t n) const {
    ArchSpec a = *this;
    a.n_classes = n;
    return a;
  }

  // Growth rate change that keeps the initial width at twice the growth rate.
  ArchSpec with_growth(std::size_t g) const {
    ArchSpec a = *this;
    a.growth_rate = g;
    a.init_features = 2 * g;
    return a;
  }

  void validate() const {
    WSAED_CHECK(block_layers.size() == 4, "architecture needs 4 dense blocks, got ", block_layers.size());
    for (auto n : block_layers) WSAED_CHECK(n >= 1, "every dense block needs at least one layer");
    WSAED_CHECK(growth_rate > 0, "growth_rate must be positive");
    WSAED_CHECK(bottleneck_factor > 0, "bottleneck_factor must be positive");
    WSAED_CHECK(compression > 0.0 && compression <= 1.0, "compression must be in (0, 1]");
    WSAED_CHECK(init_features > 0 && init_kernel % 2 == 1 && init_stride >= 1,
                "invalid initial convolution");
    WSAED_CHECK(transitions <= 3, "at most 3 transitions fit between 4 blocks");
    WSAED_CHECK(n_classes >= 1, "n_classes must be >= 1");
    WSAED_CHECK(n_mels >= 1, "n_mels must be >= 1");
  }

  std::size_t downsample_factor() const { return init_stride << transitions; }

  std::size_t bottleneck_width() const { return bottleneck_factor * growth_rate; }

  std::size_t transition_width(std::size_t in_channels) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(in_channels * compression)));
  }

  // Channels K of the feature map that feeds GAP.
  std::size_t feature_channels() const {
    std::size_t c = init_features;
    for (std::size_t b = 0; b < 4; ++b) {
      c += block_layers[b] * growth_rate;
      if (b < transitions) c = transition_width(c);
    }
    return c;
  }

  // (T', N') of the feature map for a T x N input.
  std::pair<std::size_t, std::size_t> feature_map_size(std::size_t T, std::size_t N) const {
    const std::size_t pad = init_kernel / 2;
    std::size_t t = (T + 2 * pad - init_kernel) / init_stride + 1;
    std::size_t n = (N + 2 * pad - init_kernel) / init_stride + 1;
    for (std::size_t i = 0; i < transitions; ++i) {
      t = (t + 1) / 2;
      n = (n + 1) / 2;
    }
    return {t, n};
  }

  bool operator==(const ArchSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const ArchSpec& a) {
  j = nlohmann::json{{"name", a.name},
                     {"block_layers", a.block_layers},
                     {"growth_rate", a.growth_rate},
                     {"bottleneck_factor", a.bottleneck_factor},
                     {"compression", a.compression},
                     {"init_features", a.init_features},
                     {"init_kernel", a.init_kernel},
                     {"init_stride", a.init_stride},
                     {"transitions", a.transitions},
                     {"n_classes", a.n_classes},
                     {"n_mels", a.n_mels}};
}

inline void from_json(const nlohmann::json& j, ArchSpec& a) {
  j.at("name").get_to(a.name);
  j.at("block_layers").get_to(a.block_layers);
  j.at("growth_rate").get_to(a.growth_rate);
  j.at("bottleneck_factor").get_to(a.bottleneck_factor);
  j.at("compression").get_to(a.compression);
  j.at("init_features").get_to(a.init_features);
  j.at("init_kernel").get_to(a.init_kernel);
  j.at("init_stride").get_to(a.init_stride);
  j.at("transitions").get_to(a.transitions);
  j.at("n_classes").get_to(a.n_classes);
  j.at("n_mels").get_to(a.n_mels);
}

template <typename T>
struct BatchNormParams {
  Var<T> gamma, beta;
  Tensor<T> running_mean, running_var;
};

template <typename T>
struct DenseLayerParams {
  BatchNormParams<T> norm1;
  Var<T> conv1;  // 1x1 bottleneck
  BatchNormParams<T> norm2;
  Var<T> conv2;  // 3x3, growth_rate outputs
};

template <typename T>
struct TransitionParams {
  BatchNormParams<T> norm;
  Var<T> conv;
};

template <typename T>
struct ModelWeights {
  ArchSpec arch;
  Var<T> conv0;
  std::vector<std::vector<DenseLayerParams<T>>> blocks;
  std::vector<TransitionParams<T>> transitions;
  BatchNormParams<T> final_norm;
  Var<T> classifier;  // [n_classes, K]: w_k^c at (c, k)

  // Visits every trainable parameter, then calls `buffer` for every running
  // statistic, in a fixed order with stable names.
  template <typename ParamFn, typename BufferFn>
  void visit(ParamFn&& param, BufferFn&& buffer) {
    auto bn = [&](const std::string& prefix, BatchNormParams<T>& p) {
      param(prefix + ".gamma", p.gamma);
      param(prefix + ".beta", p.beta);
      buffer(prefix + ".running_mean", p.running_mean);
      buffer(prefix + ".running_var", p.running_var);
    };
    param(std::string("conv0"), conv0);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      for (std::size_t l = 0; l < blocks[b].size(); ++l) {
        const std::string prefix = detail::concat("block", b + 1, ".layer", l + 1);
        auto& layer = blocks[b][l];
        bn(prefix + ".norm1", layer.norm1);
        param(prefix + ".conv1", layer.conv1);
        bn(prefix + ".norm2", layer.norm2);
        param(prefix + ".conv2", layer.conv2);
      }
      if (b < transitions.size()) {
        const std::string prefix = detail::concat("transition", b + 1);
        bn(prefix + ".norm", transitions[b].norm);
        param(prefix + ".conv", transitions[b].conv);
      }
    }
    bn("final_norm", final_norm);
    param(std::string("classifier"), classifier);
  }

  std::vector<Var<T>> parameters() const {
    std::vector<Var<T>> out;
    const_cast<ModelWeights*>(this)->visit([&](const std::string&, Var<T>& v) { out.push_back(v); },
                                           [](const std::string&, Tensor<T>&) {});
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.value().size();
    return n;
  }

  // Deep copy: the result shares no nodes with this model.
  ModelWeights clone() const {
    ModelWeights copy = *this;
    copy.visit([](const std::string&, Var<T>& v) { v = v.clone(); },
               [](const std::string&, Tensor<T>&) {});
    return copy;
  }

  void zero_grad() {
    visit([](const std::string&, Var<T>& v) { v.zero_grad(); }, [](const std::string&, Tensor<T>&) {});
  }
};

namespace detail {

template <typename T>
Var<T> kaiming_uniform(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng, std::string name) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return Var<T>(std::move(t), true, std::move(name));
}

template <typename T>
BatchNormParams<T> make_bn(std::size_t channels) {
  return {Var<T>(Tensor<T>({channels}, T(1)), true), Var<T>(Tensor<T>({channels}, T(0)), true),
          Tensor<T>({channels}, T(0)), Tensor<T>({channels}, T(1))};
}

}  // namespace detail

// Deterministic given (arch, seed): Kaiming-uniform convolutions and
// classifier, BN gamma = 1 and beta = 0, running stats (0, 1).
template <typename T = float>
ModelWeights<T> build_model(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  ModelWeights<T> w;
  w.arch = arch;
  const std::size_t k0 = arch.init_kernel;
  w.conv0 = detail::kaiming_uniform<T>({arch.init_features, 1, k0, k0}, k0 * k0, rng, "conv0");
  std::size_t channels = arch.init_features;
  const std::size_t bw = arch.bottleneck_width();
  for (std::size_t b = 0; b < 4; ++b) {
    std::vector<DenseLayerParams<T>> block;
    for (std::size_t l = 0; l < arch.block_layers[b]; ++l) {
      DenseLayerParams<T> layer;
      layer.norm1 = detail::make_bn<T>(channels);
      layer.conv1 = detail::kaiming_uniform<T>({bw, channels, 1, 1}, channels, rng, "conv1");
      layer.norm2 = detail::make_bn<T>(bw);
      layer.conv2 = detail::kaiming_uniform<T>({arch.growth_rate, bw, 3, 3}, bw * 9, rng, "conv2");
      block.push_back(std::move(layer));
      channels += arch.growth_rate;
    }
    w.blocks.push_back(std::move(block));
    if (b < arch.transitions) {
      const std::size_t out = arch.transition_width(channels);
      TransitionParams<T> tr;
      tr.norm = detail::make_bn<T>(channels);
      tr.conv = detail::kaiming_uniform<T>({out, channels, 1, 1}, channels, rng, "transition");
      w.transitions.push_back(std::move(tr));
      channels = out;
    }
  }
  w.final_norm = detail::make_bn<T>(channels);
  w.classifier = detail::kaiming_uniform<T>({arch.n_classes, channels}, channels, rng, "classifier");
  // Give every node its qualified name for error messages.
  w.visit(
      [](const std::string& name, Var<T>& v) {
        v = Var<T>(v.value(), true, name);
      },
      [](const std::string&, Tensor<T>&) {});
  return w;
}

// Batched forward result; all four stay attached to the autograd graph.
template <typename T>
struct ForwardBatch {
  Var<T> feature_map;    // [B, K, T', N']
  Var<T> gap_responses;  // [B, K]
  Var<T> scores;         // [B, C], pre-sigmoid S_c
  Var<T> probs;          // [B, C]
};

namespace detail {

template <typename T>
Var<T> bn_relu(const Var<T>& x, BatchNormParams<T>& p, Mode mode) {
  return relu(batch_norm(x, p.gamma, p.beta, p.running_mean, p.running_var, mode));
}

}  // namespace detail

// input: [B, 1, T, N]. Train mode normalizes with batch statistics and
// updates the running estimates stored in `w`.
template <typename T>
ForwardBatch<T> forward(ModelWeights<T>& w, const Var<T>& input, Mode mode) {
  const ArchSpec& arch = w.arch;
  const Shape& s = input.shape();
  WSAED_CHECK_SHAPE(s.size() == 4 && s[1] == 1, "model input must be [B,1,T,N], got ", shape_str(s));
  WSAED_CHECK_SHAPE(s[3] == arch.n_mels, "input has ", s[3], " mel bands, model expects ", arch.n_mels);
  WSAED_CHECK_SHAPE(s[2] >= arch.downsample_factor(), "input below minimum length: ", s[2],
                    " frames, architecture needs at least ", arch.downsample_factor());

  const std::size_t pad = arch.init_kernel / 2;
  Var<T> x = conv2d(input, w.conv0, {arch.init_stride, arch.init_stride}, {pad, pad});
  for (std::size_t b = 0; b < w.blocks.size(); ++b) {
    for (auto& layer : w.blocks[b]) {
      Var<T> h = conv2d(detail::bn_relu(x, layer.norm1, mode), layer.conv1);
      h = conv2d(detail::bn_relu(h, layer.norm2, mode), layer.conv2, {1, 1}, {1, 1});
      x = concat_channels<T>({x, h});
    }
    if (b < w.transitions.size()) {
      auto& tr = w.transitions[b];
      x = avg_pool2d(conv2d(detail::bn_relu(x, tr.norm, mode), tr.conv), 2);
    }
  }
  ForwardBatch<T> out;
  out.feature_map = detail::bn_relu(x, w.final_norm, mode);
  out.gap_responses = global_avg_pool(out.feature_map);
  out.scores = dense(out.gap_responses, w.classifier);
  out.probs = sigmoid(out.scores);
  return out;
}

// Per-clip view of an eval-mode forward pass.
struct ForwardOutput {
  Tensor<float> feature_map;    // [K, T', N']: channel k is F_k
  std::vector<float> gap_responses;  // G_k
  std::vector<float> scores;    // S_c
  std::vector<float> probs;     // y_c = sigmoid(S_c)
};

inline Var<float> spectrogram_batch(const std::vector<const Spectrogram*>& specs) {
  WSAED_CHECK(!specs.empty(), "empty batch");
  const std::size_t T = specs[0]->num_frames(), N = specs[0]->n_mels;
  Tensor<float> x({specs.size(), 1, T, N});
  for (std::size_t i = 0; i < specs.size(); ++i) {
    WSAED_CHECK_SHAPE(specs[i]->num_frames() == T && specs[i]->n_mels == N,
                      "batched spectrograms must share a shape");
    std::copy(specs[i]->frames.data(), specs[i]->frames.data() + T * N, x.data() + i * T * N);
  }
  return Var<float>(std::move(x));
}

// Eval-mode inference for a batch of same-length spectrograms.
inline std::vector<ForwardOutput> infer(ModelWeights<float>& w, const std::vector<const Spectrogram*>& specs) {
  NoGradGuard guard;
  ForwardBatch<float> fb = forward(w, spectrogram_batch(specs), Mode::kEval);
  const Shape& fs = fb.feature_map.shape();
  const std::size_t K = fs[1], plane = fs[1] * fs[2] * fs[3], C = w.arch.n_classes;
  std::vector<ForwardOutput> outs(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto& o = outs[i];
    const float* f = fb.feature_map.value().data() + i * plane;
    o.feature_map = Tensor<float>({fs[1], fs[2], fs[3]}, std::vector<float>(f, f + plane));
    const float* g = fb.gap_responses.value().data() + i * K;
    o.gap_responses.assign(g, g + K);
    const float* sc = fb.scores.value().data() + i * C;
    o.scores.assign(sc, sc + C);
    const float* p = fb.probs.value().data() + i * C;
    o.probs.assign(p, p + C);
  }
  return outs;
}

inline ForwardOutput infer(ModelWeights<float>& w, const Spectrogram& spec) {
  return std::move(infer(w, std::vector<const Spectrogram*>{&spec})[0]);
}

}  // namespace wsaed
