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
#ifndef KOOPMAN_NNDM_HPP
#define KOOPMAN_NNDM_HPP

/**
 * @file
 * @brief Neural-network dynamics model baseline: a two-hidden-layer ReLU MLP
 * x⁺ = f(x, u) whose width is chosen so the parameter count matches a given
 * Koopman model.
 */

#include "koopman/koopman_net.hpp"

namespace koopman {

struct NndmLayout {
  int n_x = 0, n_u = 0, width = 0;

  int n_in() const { return n_x + n_u; }
  Eigen::Index w1() const { return 0; }
  Eigen::Index b1() const { return w1() + Eigen::Index{width} * n_in(); }
  Eigen::Index w2() const { return b1() + width; }
  Eigen::Index b2() const { return w2() + Eigen::Index{width} * width; }
  Eigen::Index w3() const { return b2() + width; }
  Eigen::Index b3() const { return w3() + Eigen::Index{n_x} * width; }
  Eigen::Index size() const { return b3() + n_x; }

  std::vector<ParamLayout::Block> blocks() const;
};

class NndmModel {
 public:
  NndmModel() = default;
  explicit NndmModel(const NndmLayout& layout) : layout_(layout), params_(Vector::Zero(layout.size())) {}

  const NndmLayout& layout() const { return layout_; }
  int n_x() const { return layout_.n_x; }
  int n_u() const { return layout_.n_u; }
  int width() const { return layout_.width; }
  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  /// Parameter count of the Koopman model this baseline was matched against (0 if unmatched).
  Eigen::Index matched_count = 0;

  ConstMatrixMap W1() const { return {params_.data() + layout_.w1(), layout_.width, layout_.n_in()}; }
  MatrixMap W1() { return {params_.data() + layout_.w1(), layout_.width, layout_.n_in()}; }
  ConstVectorMap b1() const { return {params_.data() + layout_.b1(), layout_.width}; }
  VectorMap b1() { return {params_.data() + layout_.b1(), layout_.width}; }
  ConstMatrixMap W2() const { return {params_.data() + layout_.w2(), layout_.width, layout_.width}; }
  MatrixMap W2() { return {params_.data() + layout_.w2(), layout_.width, layout_.width}; }
  ConstVectorMap b2() const { return {params_.data() + layout_.b2(), layout_.width}; }
  VectorMap b2() { return {params_.data() + layout_.b2(), layout_.width}; }
  ConstMatrixMap W3() const { return {params_.data() + layout_.w3(), layout_.n_x, layout_.width}; }
  MatrixMap W3() { return {params_.data() + layout_.w3(), layout_.n_x, layout_.width}; }
  ConstVectorMap b3() const { return {params_.data() + layout_.b3(), layout_.n_x}; }
  VectorMap b3() { return {params_.data() + layout_.b3(), layout_.n_x}; }

 private:
  NndmLayout layout_;
  Vector params_;
};

/// Width whose parameter count is closest to \p target.
int matched_width(int n_x, int n_u, Eigen::Index target);

NndmModel init_nndm(int n_x, int n_u, int width, std::uint64_t seed);

/// One-step prediction.
Vector nndm_step(const NndmModel& model, const Vector& x, const Vector& u);

/// (1/W) Σ_{k=1..T} β^k ‖x̂_k − x_k‖² with x̂ rolled out through the MLP, mean over the batch.
double nndm_loss(const NndmModel& model, std::span<const Trajectory* const> batch, const TrainConfig& cfg);

struct NndmLossAndGrad {
  double loss = 0;
  Vector grad;
};

/// Backpropagation through the T-step rollout.
NndmLossAndGrad nndm_loss_and_grads(const NndmModel& model, std::span<const Trajectory* const> batch,
                                    const TrainConfig& cfg);

double nndm_prediction_error(const NndmModel& model, std::span<const Trajectory* const> windows, int T);

/**
 * Trains the baseline with the same loop as train(): Adam, the same shuffling
 * stream, the same schedule. The width matches the Koopman model that
 * cfg would build for this dataset to within 2% of its parameter count.
 */
std::pair<NndmModel, TrainReport> train_nndm(const Dataset& data, const TrainConfig& cfg);

std::string serialize_nndm(const NndmModel& model);
NndmModel deserialize_nndm(const std::string& bytes);

}  // namespace koopman

#endif  // KOOPMAN_NNDM_HPP
