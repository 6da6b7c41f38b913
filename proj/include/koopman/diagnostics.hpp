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
#ifndef KOOPMAN_DIAGNOSTICS_HPP
#define KOOPMAN_DIAGNOSTICS_HPP

/**
 * @file
 * @brief Conditioning and correlation measurements of a learned embedding:
 * κ of the centred embedding covariance, κ(BᵀB), and the Pearson correlation
 * matrix of the embedding coordinates.
 */

#include "koopman/dataset.hpp"
#include "koopman/koopman_net.hpp"

#include <optional>
#include <vector>

namespace koopman {

/// Variance below which an embedding coordinate counts as constant.
inline constexpr double kMinVariance = 1e-18;
/// Eigenvalue ratio below which a covariance is treated as rank deficient.
inline constexpr double kRankTolerance = 1e-12;

/// Centred sample covariance (1/(N−1)) Σ (z − z̄)(z − z̄)ᵀ of the columns of Z.
Matrix embedding_covariance(const Matrix& Z);

struct GramCondition {
  double kappa = 0;
  double lambda_min = 0;
  /// First zero-variance coordinate when the embedding is degenerate.
  std::optional<int> degenerate_coordinate;
};

/// κ of the centred covariance of the columns of Z; +∞ when rank deficient.
GramCondition gram_condition(const Matrix& Z);

/// Every state of every test window, one per column.
Matrix test_states(const Dataset& data);

/// gram_condition over the encoded test split.
GramCondition gram_condition(const KoopmanModel& model, const Dataset& data);

/// cond(BᵀB); +∞ when B is rank deficient. Requires n_u >= 1.
double control_condition(const Matrix& B);
double control_condition(const KoopmanModel& model);

struct FeatureCorrelation {
  Matrix corr;
  double mean_abs_offdiag = 0;
  std::vector<int> excluded;  // constant coordinates, left out of the mean
};

/// Pearson correlation of the rows of Z (one embedding coordinate per row).
FeatureCorrelation feature_correlation(const Matrix& Z);
FeatureCorrelation feature_correlation(const KoopmanModel& model, const Dataset& data);

struct DiagnosticsReport {
  double kappa_G = 0;
  double lambda_min_G = 0;
  double kappa_BtB = 0;  // NaN for autonomous models
  double mean_abs_offdiag_corr = 0;
  Matrix corr;
};

DiagnosticsReport diagnose(const KoopmanModel& model, const Dataset& data);

Json to_json(const DiagnosticsReport& report);
/// Comma-separated correlation matrix, one row per line, no header.
std::string correlation_csv(const Matrix& corr);

}  // namespace koopman

#endif  // KOOPMAN_DIAGNOSTICS_HPP
