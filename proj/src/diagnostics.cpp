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
#include "koopman/diagnostics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace koopman {

Matrix embedding_covariance(const Matrix& Z) {
  if (Z.cols() < 2) throw std::invalid_argument("embedding_covariance: need at least 2 samples");
  const Matrix Zc = Z.colwise() - Z.rowwise().mean();
  return Zc * Zc.transpose() / double(Z.cols() - 1);
}

GramCondition gram_condition(const Matrix& Z) {
  const Matrix G = embedding_covariance(Z);
  GramCondition out;
  for (Eigen::Index i = 0; i < G.rows(); ++i) {
    if (G(i, i) <= kMinVariance) {
      out.degenerate_coordinate = static_cast<int>(i);
      out.kappa = std::numeric_limits<double>::infinity();
      out.lambda_min = 0;
      return out;
    }
  }
  const SymEig<double> e = sym_eig(G);
  out.lambda_min = e.values(0);
  const double hi = e.values(e.values.size() - 1);
  out.kappa = out.lambda_min <= kRankTolerance * hi ? std::numeric_limits<double>::infinity() : cond_spd(G);
  return out;
}

Matrix test_states(const Dataset& data) {
  Eigen::Index cols = 0;
  for (const Trajectory* w : data.test()) cols += w->states.cols();
  Matrix X(data.env.n_x, cols);
  Eigen::Index c = 0;
  for (const Trajectory* w : data.test()) {
    X.middleCols(c, w->states.cols()) = w->states;
    c += w->states.cols();
  }
  return X;
}

GramCondition gram_condition(const KoopmanModel& model, const Dataset& data) {
  return gram_condition(encode(model, test_states(data)));
}

double control_condition(const Matrix& B) {
  if (B.cols() < 1) throw std::invalid_argument("control_condition: model has no control input");
  const Matrix BtB = B.transpose() * B;
  const SymEig<double> e = sym_eig(BtB);
  const double hi = e.values(e.values.size() - 1);
  if (hi <= 0 || e.values(0) <= kRankTolerance * hi) return std::numeric_limits<double>::infinity();
  return cond_spd(BtB);
}

double control_condition(const KoopmanModel& model) { return control_condition(Matrix(model.B())); }

FeatureCorrelation feature_correlation(const Matrix& Z) {
  const Matrix G = embedding_covariance(Z);
  const Eigen::Index n = G.rows();
  FeatureCorrelation out;
  out.corr = Matrix::Identity(n, n);
  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (G(i, i) > kMinVariance)
      kept.push_back(i);
    else
      out.excluded.push_back(static_cast<int>(i));
  }
  if (kept.empty()) throw std::invalid_argument("feature_correlation: every embedding coordinate is constant");
  const Vector sd = G.diagonal().cwiseMax(0.0).cwiseSqrt();
  double acc = 0;
  std::size_t pairs = 0;
  for (Eigen::Index i : kept) {
    for (Eigen::Index j : kept) {
      if (i == j) continue;
      const double r = std::clamp(G(i, j) / (sd(i) * sd(j)), -1.0, 1.0);
      out.corr(i, j) = r;
      acc += std::abs(r);
      ++pairs;
    }
  }
  out.mean_abs_offdiag = pairs ? acc / double(pairs) : 0.0;
  return out;
}

FeatureCorrelation feature_correlation(const KoopmanModel& model, const Dataset& data) {
  return feature_correlation(encode(model, test_states(data)));
}

DiagnosticsReport diagnose(const KoopmanModel& model, const Dataset& data) {
  const Matrix Z = encode(model, test_states(data));
  const GramCondition g = gram_condition(Z);
  FeatureCorrelation fc = feature_correlation(Z);
  DiagnosticsReport r;
  r.kappa_G = g.kappa;
  r.lambda_min_G = g.lambda_min;
  r.kappa_BtB = model.n_u() > 0 ? control_condition(model) : std::numeric_limits<double>::quiet_NaN();
  r.mean_abs_offdiag_corr = fc.mean_abs_offdiag;
  r.corr = std::move(fc.corr);
  return r;
}

Json to_json(const DiagnosticsReport& r) {
  return Json{{"kappa_G", json_number(r.kappa_G)},
              {"lambda_min_G", json_number(r.lambda_min_G)},
              {"kappa_BtB", json_number(r.kappa_BtB)},
              {"mean_abs_offdiag_corr", json_number(r.mean_abs_offdiag_corr)},
              {"n", r.corr.rows()}};
}

std::string correlation_csv(const Matrix& corr) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < corr.rows(); ++i) {
    for (Eigen::Index j = 0; j < corr.cols(); ++j) os << (j ? "," : "") << corr(i, j);
    os << '\n';
  }
  return os.str();
}

}  // namespace koopman
