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
#ifndef KOOPMAN_POWER_LAW_HPP
#define KOOPMAN_POWER_LAW_HPP

#include "koopman/binary_io.hpp"

#include <utility>
#include <vector>

namespace koopman {

struct PowerLawPoint {
  double D = 0;
  double eps = 0;
};

/// ε(D) = A·D^−α + C.
struct PowerLawFit {
  double A = 0;
  double alpha = 0;
  double C = 0;
  double r2 = 0;
  double sse = 0;  // sum of squared log-space residuals
  bool degenerate = false;
  std::vector<PowerLawPoint> points;

  double operator()(double D) const;
};

/**
 * Least squares in log space: Σ (log ε − log(A·D^−α + C))². A grid over
 * C ∈ {0} ∪ logspace(min ε·1e-3, min ε·0.999, 40) with closed-form log-linear
 * regression at each C seeds 200 damped Gauss–Newton steps on
 * (log A, α, logit(C / min ε)). Constant ε yields A = α = 0 with the degenerate flag.
 *
 * @throws std::invalid_argument with fewer than 3 distinct D or non-positive values
 */
PowerLawFit fit_power_law(std::vector<PowerLawPoint> points);

Json to_json(const PowerLawFit& fit);

}  // namespace koopman

#endif  // KOOPMAN_POWER_LAW_HPP
