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
#ifndef KOOPMAN_TESTS_SUPPORT_HPP
#define KOOPMAN_TESTS_SUPPORT_HPP

// Shared fixtures for unit and acceptance tests: random models and windows,
// and a per-block comparison of analytic and central-difference gradients.

#include "koopman/koopman_net.hpp"
#include "koopman/rng.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace koopman::testing {

inline Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix M(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) M(i, j) = scale * rng.normal();
  return M;
}

/// Random windows with independent Gaussian states and controls.
inline std::vector<Trajectory> random_windows(Rng& rng, int n_x, int n_u, int T, int count) {
  std::vector<Trajectory> out;
  for (int i = 0; i < count; ++i) out.push_back({gaussian(rng, n_x, T + 1), gaussian(rng, n_u, T)});
  return out;
}

inline std::vector<const Trajectory*> pointers(const std::vector<Trajectory>& ws) {
  std::vector<const Trajectory*> p;
  for (const auto& w : ws) p.push_back(&w);
  return p;
}

/// Initialized model with A and B perturbed so every gradient block is generic.
inline KoopmanModel random_model(int n_x, int n_u, int n_mult, int hidden, std::uint64_t seed) {
  KoopmanModel m = init_model(n_x, n_u, n_mult, seed, hidden);
  Rng rng(derive_seed(seed, 99));
  m.A() += gaussian(rng, m.n(), m.n(), 0.1);
  m.B() = gaussian(rng, m.n(), n_u, 0.5);
  return m;
}

enum class LossTerm { Pred, Cov, Ctrl, Total };

inline double term_value(const LossTerms& t, LossTerm term) {
  switch (term) {
    case LossTerm::Pred: return t.pred;
    case LossTerm::Cov: return t.cov;
    case LossTerm::Ctrl: return t.ctrl;
    case LossTerm::Total: return t.total;
  }
  return 0;
}

/// Analytic gradient of one term, isolated through the loss weights.
inline Vector term_gradient(const KoopmanModel& m, std::span<const Trajectory* const> batch, TrainConfig cfg,
                            LossTerm term) {
  if (term == LossTerm::Total) return total_loss_and_grads(m, batch, cfg).grad;
  cfg.w_cov = 0;
  cfg.w_ctrl = 0;
  const Vector g_pred = total_loss_and_grads(m, batch, cfg).grad;
  if (term == LossTerm::Pred) return g_pred;
  (term == LossTerm::Cov ? cfg.w_cov : cfg.w_ctrl) = 1.0;
  return total_loss_and_grads(m, batch, cfg).grad - g_pred;
}

struct BlockDeviation {
  std::string block;
  double relative = 0;  // max |analytic − fd| / max(max |fd|, 1e-7)
};

/**
 * Central differences with step h on up to max_coords coordinates per block
 * (all of them when the block is smaller), compared with the analytic gradient.
 */
inline std::vector<BlockDeviation> gradient_deviation(const KoopmanModel& model,
                                                      std::span<const Trajectory* const> batch,
                                                      const TrainConfig& cfg, LossTerm term, Eigen::Index max_coords,
                                                      std::uint64_t seed, double h = 1e-6) {
  const Vector analytic = term_gradient(model, batch, cfg, term);
  TrainConfig eval_cfg = cfg;
  if (term == LossTerm::Cov) eval_cfg.w_cov = 1.0;
  if (term == LossTerm::Ctrl) eval_cfg.w_ctrl = 1.0;
  KoopmanModel probe = model;
  Rng rng(seed);
  std::vector<BlockDeviation> out;
  for (const auto& blk : model.layout().blocks()) {
    const Eigen::Index size = blk.rows * blk.cols;
    if (size == 0) continue;
    std::vector<Eigen::Index> coords;
    if (size <= max_coords) {
      for (Eigen::Index i = 0; i < size; ++i) coords.push_back(blk.offset + i);
    } else {
      for (Eigen::Index k = 0; k < max_coords; ++k)
        coords.push_back(blk.offset + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(size))));
    }
    double max_err = 0, max_fd = 0;
    for (Eigen::Index c : coords) {
      const double saved = probe.params()(c);
      probe.params()(c) = saved + h;
      const double fp = term_value(total_loss(probe, batch, eval_cfg), term);
      probe.params()(c) = saved - h;
      const double fm = term_value(total_loss(probe, batch, eval_cfg), term);
      probe.params()(c) = saved;
      const double fd = (fp - fm) / (2 * h);
      max_err = std::max(max_err, std::abs(fd - analytic(c)));
      max_fd = std::max(max_fd, std::abs(fd));
    }
    out.push_back({blk.name, max_err / std::max(max_fd, 1e-7)});
  }
  return out;
}

inline double worst(const std::vector<BlockDeviation>& d) {
  double w = 0;
  for (const auto& b : d) w = std::max(w, b.relative);
  return w;
}

}  // namespace koopman::testing

#endif  // KOOPMAN_TESTS_SUPPORT_HPP
