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

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "wsaed/autograd.hpp"

namespace wsaed {

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // L2 penalty folded into the gradient; 0 disables it.
  double weight_decay = 0.0;
  // Global gradient-norm ceiling; 0 disables clipping.
  double grad_clip_norm = 0.0;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
};

// One bias-corrected ADAM update over `params`, reading each parameter's
// accumulated gradient (a missing gradient counts as zero). Moment buffers
// are created on the first call and must keep matching the parameter list.
template <typename T>
void adam_step(std::span<Var<T>> params, AdamState<T>& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.shape());
      state.second_moment.emplace_back(p.shape());
    }
  }
  WSAED_CHECK_SHAPE(state.first_moment.size() == params.size(), "adam_step: state tracks ",
                    state.first_moment.size(), " parameters, got ", params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    WSAED_CHECK_SHAPE(state.first_moment[i].shape() == params[i].shape(),
                      "adam_step: moment shape mismatch for '", params[i].name(), "'");
    if (!params[i].has_grad()) continue;
    for (T g : params[i].grad().values())
      if (!std::isfinite(g))
        throw NumericError(detail::concat("non-finite gradient in parameter '", params[i].name(), "'"));
  }

  const AdamConfig& cfg = state.config;
  double clip_scale = 1.0;
  if (cfg.grad_clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : params)
      if (p.has_grad())
        for (T g : p.grad().values()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip_norm) clip_scale = cfg.grad_clip_norm / norm;
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var<T>& p = params[i];
    Tensor<T>& m = state.first_moment[i];
    Tensor<T>& v = state.second_moment[i];
    Tensor<T>& w = p.mutable_value();
    const bool has_grad = p.has_grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      double g = has_grad ? p.grad()[j] * clip_scale : 0.0;
      if (cfg.weight_decay > 0.0) g += cfg.weight_decay * w[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      w[j] = static_cast<T>(w[j] - cfg.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps));
    }
  }
}

}  // namespace wsaed
