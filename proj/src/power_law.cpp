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
#include "koopman/power_law.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace koopman {

double PowerLawFit::operator()(double D) const { return A * std::pow(D, -alpha) + C; }

namespace {

struct Params {
  double logA, alpha, C;
};

double sse_of(const std::vector<PowerLawPoint>& pts, const Params& p) {
  double s = 0;
  for (const auto& q : pts) {
    const double r = std::log(q.eps) - std::log(std::exp(p.logA) * std::pow(q.D, -p.alpha) + p.C);
    s += r * r;
  }
  return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
}

// Ordinary least squares of log(ε − C) on log D.
Params loglinear(const std::vector<PowerLawPoint>& pts, double C) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = double(pts.size());
  for (const auto& q : pts) {
    const double x = std::log(q.D), y = std::log(q.eps - C);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return {(sy - slope * sx) / n, -slope, C};
}

double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

// Levenberg–Marquardt on θ = (log A, α, s), C = c_hi·σ(s).
Params refine(const std::vector<PowerLawPoint>& pts, Params p, double c_hi) {
  const double frac = std::clamp(p.C / c_hi, 1e-12, 1.0 - 1e-12);
  Eigen::Vector3d th(p.logA, p.alpha, std::log(frac / (1.0 - frac)));
  const bool free_c = p.C > 0;
  auto unpack = [&](const Eigen::Vector3d& t) { return Params{t(0), t(1), free_c ? c_hi * sigmoid(t(2)) : 0.0}; };
  const Eigen::Index m = static_cast<Eigen::Index>(pts.size());
  double lambda = 1e-3;
  double cur = sse_of(pts, unpack(th));
  for (int it = 0; it < 200; ++it) {
    const Params q = unpack(th);
    Eigen::MatrixXd J(m, 3);
    Eigen::VectorXd r(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double D = pts[i].D, pw = std::exp(q.logA) * std::pow(D, -q.alpha), f = pw + q.C;
      r(i) = std::log(pts[i].eps) - std::log(f);
      J(i, 0) = -pw / f;
      J(i, 1) = pw * std::log(D) / f;
      const double sg = sigmoid(th(2));
      J(i, 2) = free_c ? -c_hi * sg * (1.0 - sg) / f : 0.0;
    }
    const Eigen::Matrix3d JtJ = J.transpose() * J;
    const Eigen::Vector3d g = J.transpose() * r;
    bool improved = false;
    for (int tries = 0; tries < 30 && !improved; ++tries) {
      Eigen::Matrix3d M = JtJ;
      for (int d = 0; d < 3; ++d) M(d, d) += lambda * std::max(JtJ(d, d), 1e-12);
      if (!free_c) {
        M.row(2).setZero();
        M.col(2).setZero();
        M(2, 2) = 1.0;
      }
      Eigen::Vector3d rhs = -g;
      if (!free_c) rhs(2) = 0;
      const Eigen::Vector3d step = M.ldlt().solve(rhs);
      const Eigen::Vector3d cand = th + step;
      const double val = step.allFinite() ? sse_of(pts, unpack(cand)) : std::numeric_limits<double>::infinity();
      if (val < cur) {
        th = cand;
        cur = val;
        lambda = std::max(lambda * 0.3, 1e-12);
        improved = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!improved) break;
  }
  return unpack(th);
}

}  // namespace

PowerLawFit fit_power_law(std::vector<PowerLawPoint> points) {
  std::set<double> distinct;
  for (const auto& p : points) {
    if (!(p.D > 0) || !std::isfinite(p.D)) throw std::invalid_argument("fit_power_law: D must be positive");
    if (!(p.eps > 0) || !std::isfinite(p.eps)) throw std::invalid_argument("fit_power_law: eps must be positive");
    distinct.insert(p.D);
  }
  if (distinct.size() < 3) throw std::invalid_argument("fit_power_law: need at least 3 distinct D values");
  // Order-independent evaluation: sort the points first.
  std::sort(points.begin(), points.end(), [](const auto& a, const auto& b) {
    return a.D != b.D ? a.D < b.D : a.eps < b.eps;
  });

  PowerLawFit fit;
  fit.points = points;
  const auto [lo, hi] = std::minmax_element(points.begin(), points.end(),
                                            [](const auto& a, const auto& b) { return a.eps < b.eps; });
  const double min_eps = lo->eps;
  if (hi->eps - lo->eps <= 1e-12 * hi->eps) {
    fit.degenerate = true;
    fit.C = min_eps;
    fit.r2 = 1.0;
    return fit;
  }

  std::vector<double> grid{0.0};
  const double g0 = std::log(min_eps * 1e-3), g1 = std::log(min_eps * 0.999);
  for (int i = 0; i < 40; ++i) grid.push_back(std::exp(g0 + (g1 - g0) * i / 39.0));

  Params best{0, 0, 0};
  double best_sse = std::numeric_limits<double>::infinity();
  for (double C : grid) {
    const Params p = loglinear(points, C);
    const double s = sse_of(points, p);
    if (s < best_sse) {
      best_sse = s;
      best = p;
    }
  }
  // Refine from the grid winner; also from the smallest positive C so a floor can emerge.
  for (const Params& start : {best, loglinear(points, grid[1])}) {
    const Params p = refine(points, start, min_eps);
    const double s = sse_of(points, p);
    if (s < best_sse) {
      best_sse = s;
      best = p;
    }
  }

  fit.A = std::exp(best.logA);
  fit.alpha = best.alpha;
  fit.C = best.C;
  fit.sse = best_sse;
  double mean = 0;
  for (const auto& p : points) mean += std::log(p.eps);
  mean /= double(points.size());
  double sst = 0;
  for (const auto& p : points) sst += (std::log(p.eps) - mean) * (std::log(p.eps) - mean);
  fit.r2 = 1.0 - best_sse / sst;
  return fit;
}

Json to_json(const PowerLawFit& fit) {
  return Json{{"A", json_number(fit.A)},         {"alpha", json_number(fit.alpha)}, {"C", json_number(fit.C)},
              {"r2", json_number(fit.r2)},       {"n_points", fit.points.size()},   {"degenerate", fit.degenerate}};
}

}  // namespace koopman
