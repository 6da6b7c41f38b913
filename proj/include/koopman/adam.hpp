/*
 Copyright 2026 The koopscale Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/
#ifndef KOOPMAN_ADAM_HPP
#define KOOPMAN_ADAM_HPP

#include "koopman/numerics.hpp"

#include <cmath>
#include <cstdint>
#include <utility>
#include <stdexcept>

namespace koopman {

struct AdamState {
  std::int64_t step = 0;
  Vector m;
  Vector v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 1e-3;

  static AdamState zeros(Eigen::Index size, double lr = 1e-3) {
    AdamState s;
    s.m = Vector::Zero(size);
    s.v = Vector::Zero(size);
    s.lr = lr;
    return s;
  }
};

/// In-place Adam update used by the training loops.
inline void adam_update(Vector& params, const Vector& grads, AdamState& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adam_step: parameter, gradient and moment shapes differ");
  state.step += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  params.array() -= state.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
}

/// One bias-corrected Adam update. Pure: the inputs are not modified.
inline std::pair<Vector, AdamState> adam_step(const Vector& params, const Vector& grads, AdamState state) {
  Vector next = params;
  adam_update(next, grads, state);
  return {std::move(next), std::move(state)};
}

}  // namespace koopman

#endif  // KOOPMAN_ADAM_HPP
