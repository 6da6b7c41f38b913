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
#ifndef KOOPMAN_KOOPMAN_NET_HPP
#define KOOPMAN_KOOPMAN_NET_HPP

/**
 * @file
 * @brief State-augmented neural Koopman model z = [x; Ψ(x)], z⁺ = A z + B u,
 * its three-term training objective and a reverse-mode gradient engine written
 * for this one architecture.
 *
 * Encoder: h1 = relu(W1 x + b1), h2 = h1 + relu(W2 h1 + b2), Ψ = W3 h2.
 * All parameters live in one flat vector so the optimiser works on it directly;
 * the accessors below return Eigen maps into that vector.
 */

#include "koopman/binary_io.hpp"
#include "koopman/dataset.hpp"
#include "koopman/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace koopman {

using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using VectorMap = Eigen::Map<Vector>;
using ConstVectorMap = Eigen::Map<const Vector>;

inline constexpr int kHiddenWidth = 256;

/// Offsets of each parameter block inside the flat parameter vector.
struct ParamLayout {
  int n_x = 0, n_u = 0, n_mult = 0, hidden = kHiddenWidth;

  int n_enc() const { return n_mult * n_x; }
  int n() const { return n_x + n_enc(); }

  Eigen::Index w1() const { return 0; }
  Eigen::Index b1() const { return w1() + Eigen::Index{hidden} * n_x; }
  Eigen::Index w2() const { return b1() + hidden; }
  Eigen::Index b2() const { return w2() + Eigen::Index{hidden} * hidden; }
  Eigen::Index w3() const { return b2() + hidden; }
  Eigen::Index a() const { return w3() + Eigen::Index{n_enc()} * hidden; }
  Eigen::Index b() const { return a() + Eigen::Index{n()} * n(); }
  Eigen::Index size() const { return b() + Eigen::Index{n()} * n_u; }

  struct Block {
    const char* name;
    Eigen::Index offset, rows, cols;
  };
  std::vector<Block> blocks() const;
};

class KoopmanModel {
 public:
  KoopmanModel() = default;
  explicit KoopmanModel(const ParamLayout& layout)
      : layout_(layout), params_(Vector::Zero(layout.size())) {}

  const ParamLayout& layout() const { return layout_; }
  int n_x() const { return layout_.n_x; }
  int n_u() const { return layout_.n_u; }
  int n_mult() const { return layout_.n_mult; }
  int n() const { return layout_.n(); }
  int n_enc() const { return layout_.n_enc(); }
  int hidden() const { return layout_.hidden; }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  MatrixMap W1() { return {params_.data() + layout_.w1(), layout_.hidden, layout_.n_x}; }
  ConstMatrixMap W1() const { return {params_.data() + layout_.w1(), layout_.hidden, layout_.n_x}; }
  VectorMap b1() { return {params_.data() + layout_.b1(), layout_.hidden}; }
  ConstVectorMap b1() const { return {params_.data() + layout_.b1(), layout_.hidden}; }
  MatrixMap W2() { return {params_.data() + layout_.w2(), layout_.hidden, layout_.hidden}; }
  ConstMatrixMap W2() const { return {params_.data() + layout_.w2(), layout_.hidden, layout_.hidden}; }
  VectorMap b2() { return {params_.data() + layout_.b2(), layout_.hidden}; }
  ConstVectorMap b2() const { return {params_.data() + layout_.b2(), layout_.hidden}; }
  MatrixMap W3() { return {params_.data() + layout_.w3(), n_enc(), layout_.hidden}; }
  ConstMatrixMap W3() const { return {params_.data() + layout_.w3(), n_enc(), layout_.hidden}; }
  MatrixMap A() { return {params_.data() + layout_.a(), n(), n()}; }
  ConstMatrixMap A() const { return {params_.data() + layout_.a(), n(), n()}; }
  MatrixMap B() { return {params_.data() + layout_.b(), n(), n_u()}; }
  ConstMatrixMap B() const { return {params_.data() + layout_.b(), n(), n_u()}; }

  /// Fixed read-out P = [I | 0], n_x × n.
  Matrix P() const;

 private:
  ParamLayout layout_;
  Vector params_;
};

/**
 * Fan-in uniform hidden layers, orthogonal W3 (unit singular values), A the
 * nearest orthogonal matrix to a Gaussian draw scaled by 0.99, B Gaussian·0.01.
 */
KoopmanModel init_model(int n_x, int n_u, int n_mult, std::uint64_t seed, int hidden = kHiddenWidth);

/// Activations kept for the backward pass of a batched encode.
struct EncoderCache {
  Matrix X, H1, R2, H2;
};

/// Embeds each column of X; z = [x; Ψ(x)].
Matrix encode(const KoopmanModel& model, const Matrix& X, EncoderCache* cache = nullptr);
Vector encode(const KoopmanModel& model, const Vector& x);

/**
 * Accumulates dL/dθ for the encoder blocks into grad (same layout as the
 * model parameters) given dL/dZ, and returns dL/dX.
 */
Matrix encode_backward(const KoopmanModel& model, const EncoderCache& cache, const Matrix& dZ, Vector& grad);

inline constexpr double kBlowUpNorm = 1e12;

struct LatentRollout {
  Matrix z;  // n × T, predictions for t+1..t+T
  Matrix x;  // n_x × T
  bool blew_up = false;
};

LatentRollout rollout_latent(const KoopmanModel& model, const Vector& x0, const Matrix& controls);

struct TrainConfig {
  int T = 5;
  double beta = 0.9;
  double w_cov = 1.0;
  double w_ctrl = 0.1;
  int batch_size = 256;
  int epochs = 200;
  /// Lower bound on optimizer steps; small datasets get extra epochs to reach it (0 disables).
  long long min_steps = 0;
  double learning_rate = 1e-3;
  double lr_decay = 0.1;      // multiplier applied once
  double lr_decay_at = 0.8;   // fraction of epochs after which the decay applies
  double ridge_ctrl = 1e-6;   // ε_B in the inverse-control pseudoinverse
  int n_mult = 4;
  int hidden = kHiddenWidth;
  std::uint64_t seed = 0;

  /// W = sum_{j=1}^{T} β^j.
  double W() const;
  void validate() const;
};

Json to_json(const TrainConfig& cfg);
/// Missing fields keep their defaults; unknown fields are rejected.
TrainConfig train_config_from_json(const Json& j);

/// (1/W) Σ_{k=1..T} β^k ‖x̂_k − x_k‖² over the first T steps of the window.
double loss_pred(const KoopmanModel& model, const Trajectory& window, const TrainConfig& cfg);

/// Mean squared off-diagonal entry of the centred batch covariance of the columns of Z.
double loss_cov(const Matrix& Z);

/// (1/W) Σ_{k=0..T-1} β^k ‖û_k − u_k‖², û_k = (BᵀB + ε_B I)⁻¹Bᵀ(Φ(x_{k+1}) − A Φ(x_k)).
double loss_ctrl(const KoopmanModel& model, const Trajectory& window, const TrainConfig& cfg);

struct LossTerms {
  double total = 0, pred = 0, cov = 0, ctrl = 0;
};

/// Composite loss of a batch; the covariance term uses the embeddings of the window start states.
LossTerms total_loss(const KoopmanModel& model, std::span<const Trajectory* const> batch, const TrainConfig& cfg);

struct LossAndGrad {
  LossTerms loss;
  Vector grad;
};

/// Raised when a batch produces a non-finite loss.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, std::size_t window)
      : std::runtime_error(what + " (window " + std::to_string(window) + ")"), window_(window) {}
  std::size_t window() const { return window_; }

 private:
  std::size_t window_;
};

/// Exact reverse-mode gradient of total_loss with respect to every parameter.
LossAndGrad total_loss_and_grads(const KoopmanModel& model, std::span<const Trajectory* const> batch,
                                 const TrainConfig& cfg);

/// Undiscounted mean squared multi-step error at horizon T, averaged over windows.
double prediction_error(const KoopmanModel& model, std::span<const Trajectory* const> windows, int T);

struct EpochLoss {
  double total = 0, pred = 0, cov = 0, ctrl = 0;
};

struct TrainReport {
  std::vector<EpochLoss> epochs;
  double eps_test = 0;
  bool diverged = false;
  double wall_seconds = 0;
};

/// Mini-batches per epoch over \p n_windows windows (a trailing singleton joins the previous batch).
std::size_t batches_per_epoch(std::size_t n_windows, int batch_size);

/// max(epochs, ceil(min_steps / batches_per_epoch)).
int effective_epochs(const TrainConfig& cfg, std::size_t n_windows);

/// Windows of at least T transitions; shorter ones cannot feed the horizon-T loss.
std::vector<const Trajectory*> usable_windows(std::span<const Trajectory* const> windows, int T);

/// Mini-batch Adam; shuffling and initialisation streams derive from cfg.seed.
std::pair<KoopmanModel, TrainReport> train(const Dataset& data, const TrainConfig& cfg);

std::string serialize_model(const KoopmanModel& model);
KoopmanModel deserialize_model(const std::string& bytes);
void save_model(const KoopmanModel& model, const std::filesystem::path& path);
KoopmanModel load_model(const std::filesystem::path& path);

}  // namespace koopman

#endif  // KOOPMAN_KOOPMAN_NET_HPP
