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
#include "koopman/mpc.hpp"

#include "koopman/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace koopman {

MpcConfig MpcConfig::resolved(int n_x, int n_u) const {
  MpcConfig c = *this;
  if (c.H < 1) throw std::invalid_argument("MpcConfig: H must be >= 1");
  if (c.Q.size() == 0) c.Q = Matrix::Identity(n_x, n_x);
  if (c.R.size() == 0) c.R = Matrix::Zero(n_u, n_u);
  if (c.Q.rows() != n_x || c.Q.cols() != n_x) throw std::invalid_argument("MpcConfig: Q must be n_x × n_x");
  if (c.R.rows() != n_u || c.R.cols() != n_u) throw std::invalid_argument("MpcConfig: R must be n_u × n_u");
  if (c.u_min.size() != n_u || c.u_max.size() != n_u)
    throw std::invalid_argument("MpcConfig: bounds must have n_u entries");
  if ((c.u_min.array() > c.u_max.array()).any()) throw std::invalid_argument("MpcConfig: u_min > u_max");
  for (const Matrix* W : {&c.Q, &c.R}) {
    if (W->size() == 0) continue;
    if (asymmetry(*W) > 1e-9) throw std::invalid_argument("MpcConfig: Q and R must be symmetric");
    const SymEig<double> e = sym_eig(*W);
    if (e.values(0) < -1e-9 * std::max(1.0, e.values.cwiseAbs().maxCoeff()))
      throw std::invalid_argument("MpcConfig: Q and R must be PSD");
  }
  if (c.tol <= 0 || c.max_iter < 1) throw std::invalid_argument("MpcConfig: bad solver settings");
  return c;
}

LinearSurrogate surrogate(const KoopmanModel& model) {
  auto shared = std::make_shared<const KoopmanModel>(model);
  LinearSurrogate s;
  s.lift = [shared](const Vector& x) { return encode(*shared, x); };
  s.A = model.A();
  s.B = model.B();
  s.P = Matrix::Zero(model.n_x(), model.n());
  s.P.leftCols(model.n_x()).setIdentity();
  return s;
}

LinearSurrogate surrogate(const EdmdModel& model) {
  auto dict = std::make_shared<const Dictionary>(model.dict);
  LinearSurrogate s;
  s.lift = [dict](const Vector& x) { return dict->lift(x); };
  s.A = model.A;
  s.B = model.B;
  const std::vector<int> rows = model.dict.state_rows();
  s.P = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), model.dict.n());
  for (std::size_t i = 0; i < rows.size(); ++i) s.P(static_cast<Eigen::Index>(i), rows[i]) = 1.0;
  return s;
}

MpcProblem condense(const LinearSurrogate& model, const Vector& x, const Matrix& ref, const MpcConfig& config) {
  const int n_x = model.n_x(), n_u = model.n_u();
  const MpcConfig cfg = config.resolved(n_x, n_u);
  const int H = cfg.H;
  if (ref.rows() != n_x || ref.cols() != H) throw std::invalid_argument("condense: reference window must be n_x × H");
  const Eigen::Index n = model.A.rows(), N = Eigen::Index{H} * n_u;

  MpcProblem p;
  p.Hess = Matrix::Zero(N, N);
  p.lin = Vector::Zero(N);
  p.lo = cfg.u_min.replicate(H, 1);
  p.hi = cfg.u_max.replicate(H, 1);

  Vector f = model.lift(x);  // free response A^k z_t
  Matrix S = Matrix::Zero(n, N);  // z_{t+k} = A^k z_t + S U
  for (int k = 0; k < H; ++k) {
    f = model.A * f;
    S = model.A * S;
    S.middleCols(Eigen::Index{k} * n_u, n_u) += model.B;
    const Matrix C = model.P * S;
    const Vector d = model.P * f - ref.col(k);
    const Matrix QC = cfg.Q * C;
    p.Hess.noalias() += 2.0 * C.transpose() * QC;
    p.lin.noalias() += 2.0 * QC.transpose() * d;
    p.constant += d.dot(cfg.Q * d);
    p.Hess.block(Eigen::Index{k} * n_u, Eigen::Index{k} * n_u, n_u, n_u) += 2.0 * cfg.R;
  }
  p.Hess = 0.5 * (p.Hess + p.Hess.transpose()).eval();
  return p;
}

MpcProblem condense(const KoopmanModel& model, const Vector& x, const Matrix& ref, const MpcConfig& cfg) {
  return condense(surrogate(model), x, ref, cfg);
}

double rollout_cost(const LinearSurrogate& model, const Vector& x, const Matrix& ref, const Vector& U,
                    const MpcConfig& config) {
  const MpcConfig cfg = config.resolved(model.n_x(), model.n_u());
  const int n_u = model.n_u();
  Vector z = model.lift(x);
  double cost = 0;
  for (int k = 0; k < cfg.H; ++k) {
    const Vector u = U.segment(Eigen::Index{k} * n_u, n_u);
    z = model.A * z + model.B * u;
    const Vector e = model.P * z - ref.col(k);
    cost += e.dot(cfg.Q * e) + u.dot(cfg.R * u);
  }
  return cost;
}

Vector proj_box(const Vector& U, const Vector& lo, const Vector& hi) { return U.cwiseMax(lo).cwiseMin(hi); }

double kkt_residual(const MpcProblem& p, const Vector& U) {
  if (U.size() == 0) return 0.0;
  return (U - proj_box(U - (p.Hess * U + p.lin), p.lo, p.hi)).cwiseAbs().maxCoeff();
}

namespace {

double largest_eigenvalue(const Matrix& M) {
  const Eigen::Index N = M.rows();
  Vector v(N);
  for (Eigen::Index i = 0; i < N; ++i) v(i) = 1.0 + 0.1 * double(i) / double(N);
  v.normalize();
  double lambda = 0;
  for (int it = 0; it < 50; ++it) {
    const Vector w = M * v;
    lambda = v.dot(w);
    const double nw = w.norm();
    if (nw <= 1e-300) return 0.0;
    v = w / nw;
  }
  return std::max(lambda, (M * v).norm());
}

// Solves the equality-constrained problem on the free set of U and keeps it if it is feasible and better.
bool polish(const MpcProblem& p, Vector& U, double& residual) {
  const Eigen::Index N = U.size();
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < N; ++i) {
    const double scale = 1e-9 * (1.0 + std::abs(U(i)));
    if (U(i) - p.lo(i) > scale && p.hi(i) - U(i) > scale) free.push_back(i);
  }
  Vector cand = U;
  if (!free.empty()) {
    const Eigen::Index F = static_cast<Eigen::Index>(free.size());
    Matrix HF(F, F);
    Vector rhs(F);
    const Vector g = p.Hess * U + p.lin;
    for (Eigen::Index a = 0; a < F; ++a) {
      rhs(a) = -g(free[a]);
      for (Eigen::Index b = 0; b < F; ++b) HF(a, b) = p.Hess(free[a], free[b]);
    }
    // Newton step on the free coordinates: HF δ = −g_F.
    const Vector delta = HF.ldlt().solve(rhs);
    if (!delta.allFinite()) return false;
    for (Eigen::Index a = 0; a < F; ++a) cand(free[a]) += delta(a);
    cand = proj_box(cand, p.lo, p.hi);
  }
  const double r = kkt_residual(p, cand);
  if (r < residual && p.cost(cand) <= p.cost(U) + 1e-12 * (1.0 + std::abs(p.cost(U)))) {
    U = cand;
    residual = r;
    return true;
  }
  return false;
}

}  // namespace

QpSolution solve_box_qp(const MpcProblem& p, double tol, int max_iter, const Vector* warm_start) {
  const Eigen::Index N = p.lin.size();
  if (p.Hess.rows() != N || p.Hess.cols() != N || p.lo.size() != N || p.hi.size() != N)
    throw std::invalid_argument("solve_box_qp: inconsistent problem dimensions");
  QpSolution sol;
  const Vector zero = proj_box(Vector::Zero(N), p.lo, p.hi);
  if (N == 0) {
    sol.U = zero;
    sol.converged = true;
    return sol;
  }
  double L = largest_eigenvalue(p.Hess);
  if (L <= 1e-300) {
    // Degenerate cost; zero (projected) by convention.
    sol.U = zero;
    sol.kkt_residual = kkt_residual(p, sol.U);
    sol.converged = sol.kkt_residual <= tol;
    return sol;
  }
  L *= 1.05;

  Vector U = warm_start ? proj_box(*warm_start, p.lo, p.hi) : zero;
  Vector Y = U;
  double t = 1.0;
  double f = p.cost(U);
  sol.kkt_residual = kkt_residual(p, U);
  int it = 0;
  while (it < max_iter && sol.kkt_residual > tol) {
    ++it;
    const Vector Un = proj_box(Y - (p.Hess * Y + p.lin) / L, p.lo, p.hi);
    const double fn = p.cost(Un);
    if (fn > f + 1e-15 * (1.0 + std::abs(f))) {
      // Function-value restart; a failing plain step means L was underestimated.
      if (Y == U) L *= 2.0;
      Y = U;
      t = 1.0;
      continue;
    }
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    Y = Un + ((t - 1.0) / tn) * (Un - U);
    U = Un;
    t = tn;
    f = fn;
    sol.kkt_residual = kkt_residual(p, U);
  }
  for (int k = 0; k < 3 && sol.kkt_residual > 0; ++k)
    if (!polish(p, U, sol.kkt_residual)) break;
  sol.U = U;
  sol.iterations = it;
  sol.converged = sol.kkt_residual <= tol;
  return sol;
}

ControlOutput mpc_step(const LinearSurrogate& model, const Vector& x, const Matrix& ref, const MpcConfig& cfg) {
  const MpcProblem p = condense(model, x, ref, cfg);
  const QpSolution s = solve_box_qp(p, cfg.tol, cfg.max_iter);
  return {s.U.head(model.n_u()), s.kkt_residual, s.converged};
}

ControlOutput mpc_step(const KoopmanModel& model, const Vector& x, const Matrix& ref, const MpcConfig& cfg) {
  return mpc_step(surrogate(model), x, ref, cfg);
}

Controller make_mpc_controller(LinearSurrogate model, MpcConfig cfg) {
  auto m = std::make_shared<const LinearSurrogate>(std::move(model));
  auto c = std::make_shared<const MpcConfig>(cfg.resolved(m->n_x(), m->n_u()));
  return [m, c](const Vector& x, const Matrix& ref) { return mpc_step(*m, x, ref, *c); };
}

namespace {

Matrix padded_reference(const Matrix& reference, Eigen::Index cols) {
  if (reference.cols() == 0) throw std::invalid_argument("run_closed_loop: empty reference");
  Matrix R(reference.rows(), cols);
  for (Eigen::Index c = 0; c < cols; ++c) R.col(c) = reference.col(std::min(c, reference.cols() - 1));
  return R;
}

}  // namespace

ClosedLoopResult run_closed_loop(const StepFunction& step, const Controller& controller, const Vector& x0,
                                 const Matrix& reference, int steps, int H, double fail_threshold) {
  if (steps < 0 || H < 1) throw std::invalid_argument("run_closed_loop: steps >= 0 and H >= 1 required");
  if (reference.rows() != x0.size()) throw std::invalid_argument("run_closed_loop: reference must have n_x rows");
  const Matrix ref = padded_reference(reference, Eigen::Index{steps} + H + 1);
  ClosedLoopResult r;
  r.steps = steps;
  std::vector<Vector> xs{x0}, us;
  std::vector<double> errs, kkts;
  bool failed = false;
  for (int tau = 0; tau < steps; ++tau) {
    const ControlOutput c = controller(xs.back(), ref.middleCols(tau + 1, H));
    Vector next;
    try {
      next = step(xs.back(), c.u);
    } catch (const IntegrationError&) {
      r.truncated = true;
      break;
    }
    if (!next.allFinite() || next.norm() >= kBlowUpNorm) {
      r.truncated = true;
      break;
    }
    us.push_back(c.u);
    xs.push_back(next);
    kkts.push_back(c.kkt_residual);
    errs.push_back((next - ref.col(tau + 1)).norm());
    if (!failed && errs.back() > fail_threshold) failed = true;
    if (!failed) r.survival_steps = tau + 1;
  }
  const Eigen::Index taken = static_cast<Eigen::Index>(us.size());
  r.states.resize(x0.size(), taken + 1);
  for (Eigen::Index i = 0; i <= taken; ++i) r.states.col(i) = xs[i];
  const Eigen::Index n_u = taken ? us.front().size() : 0;
  r.controls.resize(n_u, taken);
  for (Eigen::Index i = 0; i < taken; ++i) r.controls.col(i) = us[i];
  r.reference = ref.leftCols(taken + 1);
  r.errors = Eigen::Map<const Vector>(errs.data(), taken);
  r.kkt = Eigen::Map<const Vector>(kkts.data(), taken);
  r.tracking_error = taken ? r.errors.mean() : 0.0;
  return r;
}

ClosedLoopResult run_closed_loop(const EnvSpec& env, const Controller& controller, const Vector& x0,
                                 const Matrix& reference, int steps, int H, double fail_threshold) {
  const StepFunction step = [&env](const Vector& x, const Vector& u) { return env_step(env, x, u); };
  return run_closed_loop(step, controller, x0, reference, steps, H, fail_threshold);
}

Matrix sinusoid_reference(const EnvSpec& env, int count) {
  if (!env.continuous()) throw std::invalid_argument("sinusoid_reference: needs a pendulum environment");
  const int links = env.n_x / 2;
  Matrix R = Matrix::Zero(env.n_x, count);
  for (int c = 0; c < count; ++c) {
    const double t = c * env.dt;
    for (int j = 0; j < links; ++j) {
      R(j, c) = 0.8 * std::sin(0.5 * t);
      R(links + j, c) = 0.4 * std::cos(0.5 * t);
    }
  }
  return R;
}

Json to_json(const ClosedLoopResult& r) {
  auto rows = [](const Matrix& M) {
    Json out = Json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) {
      Json col = Json::array();
      for (Eigen::Index i = 0; i < M.rows(); ++i) col.push_back(json_number(M(i, c)));
      out.push_back(col);
    }
    return out;
  };
  Json errs = Json::array(), kkt = Json::array();
  for (Eigen::Index i = 0; i < r.errors.size(); ++i) {
    errs.push_back(json_number(r.errors(i)));
    kkt.push_back(json_number(r.kkt(i)));
  }
  return Json{{"steps", r.steps},
              {"steps_taken", r.controls.cols()},
              {"survival_steps", r.survival_steps},
              {"tracking_error", json_number(r.tracking_error)},
              {"truncated", r.truncated},
              {"states", rows(r.states)},
              {"controls", rows(r.controls)},
              {"reference", rows(r.reference)},
              {"errors", errs},
              {"kkt_residual", kkt}};
}

std::string closed_loop_csv(const ClosedLoopResult& r) {
  std::ostringstream os;
  os << std::setprecision(17) << "t";
  const Eigen::Index n_x = r.states.rows(), n_u = r.controls.rows();
  for (Eigen::Index i = 0; i < n_x; ++i) os << ",x_" << i;
  for (Eigen::Index i = 0; i < n_u; ++i) os << ",u_" << i;
  for (Eigen::Index i = 0; i < n_x; ++i) os << ",ref_" << i;
  os << ",error,kkt_residual\n";
  for (Eigen::Index t = 0; t < r.controls.cols(); ++t) {
    os << t;
    for (Eigen::Index i = 0; i < n_x; ++i) os << ',' << r.states(i, t + 1);
    for (Eigen::Index i = 0; i < n_u; ++i) os << ',' << r.controls(i, t);
    for (Eigen::Index i = 0; i < n_x; ++i) os << ',' << r.reference(i, t + 1);
    os << ',' << r.errors(t) << ',' << r.kkt(t) << '\n';
  }
  return os.str();
}

Vector random_shooting_control(const NndmModel& nndm, const Vector& x, const Matrix& ref, int H, int n_samples,
                               std::uint64_t seed, const Vector& u_min, const Vector& u_max) {
  const int n_x = nndm.n_x(), n_u = nndm.n_u();
  if (n_samples < 1 || H < 1) throw std::invalid_argument("random_shooting_control: n_samples and H must be >= 1");
  if (ref.rows() != n_x || ref.cols() != H) throw std::invalid_argument("random_shooting_control: ref must be n_x × H");
  if (u_min.size() != n_u || u_max.size() != n_u) throw std::invalid_argument("random_shooting_control: bad bounds");

  Rng rng(seed);
  std::vector<Matrix> U(H, Matrix(n_u, n_samples));
  for (int s = 0; s < n_samples; ++s)
    for (int k = 0; k < H; ++k)
      for (int i = 0; i < n_u; ++i) U[k](i, s) = rng.uniform(u_min(i), u_max(i));

  // All samples advance together as columns.
  Matrix X = x.replicate(1, n_samples);
  Vector cost = Vector::Zero(n_samples);
  Matrix In(n_x + n_u, n_samples);
  for (int k = 0; k < H; ++k) {
    In.topRows(n_x) = X;
    In.bottomRows(n_u) = U[k];
    const Matrix H1 = ((nndm.W1() * In).colwise() + nndm.b1()).cwiseMax(0.0);
    const Matrix H2 = ((nndm.W2() * H1).colwise() + nndm.b2()).cwiseMax(0.0);
    X = (nndm.W3() * H2).colwise() + nndm.b3();
    cost += (X.colwise() - ref.col(k)).colwise().squaredNorm().transpose();
  }
  Eigen::Index best = 0;
  for (Eigen::Index s = 1; s < n_samples; ++s)
    if (cost(s) < cost(best)) best = s;  // NaN costs never win
  return U[0].col(best);
}

Controller make_shooting_controller(NndmModel nndm, int H, int n_samples, std::uint64_t seed, Vector u_min,
                                    Vector u_max) {
  auto m = std::make_shared<const NndmModel>(std::move(nndm));
  return [m, H, n_samples, seed, u_min, u_max](const Vector& x, const Matrix& ref) {
    // Fresh samples per state, still a pure function of (seed, x).
    std::uint64_t h = seed;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &x(i), sizeof bits);
      h = derive_seed(h, bits);
    }
    return ControlOutput{random_shooting_control(*m, x, ref, H, n_samples, h, u_min, u_max), 0.0, true};
  };
}

}  // namespace koopman
