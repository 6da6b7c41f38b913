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
#ifndef KOOPMAN_MPC_HPP
#define KOOPMAN_MPC_HPP

/**
 * @file
 * @brief Linear MPC on a lifted surrogate: condensation to a box QP over the
 * stacked control sequence, an accelerated projected-gradient solver, the
 * receding-horizon loop and a random-shooting baseline for NNDM models.
 */

#include "koopman/edmd.hpp"
#include "koopman/envs.hpp"
#include "koopman/koopman_net.hpp"
#include "koopman/nndm.hpp"

#include <functional>
#include <limits>

namespace koopman {

struct MpcConfig {
  int H = 10;
  Matrix Q;  // n_x × n_x, identity when empty
  Matrix R;  // n_u × n_u, zero when empty
  Vector u_min, u_max;
  double tol = 1e-8;
  int max_iter = 5000;

  /// Fills empty Q and R with their defaults and checks every invariant.
  MpcConfig resolved(int n_x, int n_u) const;
};

/// z⁺ = A z + B u, x = P z, z = lift(x).
struct LinearSurrogate {
  std::function<Vector(const Vector&)> lift;
  Matrix A, B, P;
  int n_x() const { return static_cast<int>(P.rows()); }
  int n_u() const { return static_cast<int>(B.cols()); }
};

LinearSurrogate surrogate(const KoopmanModel& model);
LinearSurrogate surrogate(const EdmdModel& model);

/// cost(U) = ½ Uᵀ Hess U + linᵀ U + constant, subject to lo ≤ U ≤ hi.
struct MpcProblem {
  Matrix Hess;
  Vector lin;
  double constant = 0;
  Vector lo, hi;

  double cost(const Vector& U) const { return 0.5 * U.dot(Hess * U) + lin.dot(U) + constant; }
};

/// \p ref holds x^ref_{t+1..t+H} as columns.
MpcProblem condense(const LinearSurrogate& model, const Vector& x, const Matrix& ref, const MpcConfig& cfg);
MpcProblem condense(const KoopmanModel& model, const Vector& x, const Matrix& ref, const MpcConfig& cfg);

/// Σ_k (x̂_k − r_k)ᵀ Q (x̂_k − r_k) + u_kᵀ R u_k by stepping the surrogate; the condensation oracle.
double rollout_cost(const LinearSurrogate& model, const Vector& x, const Matrix& ref, const Vector& U,
                    const MpcConfig& cfg);

struct QpSolution {
  Vector U;
  double kkt_residual = 0;
  int iterations = 0;
  bool converged = false;
};

Vector proj_box(const Vector& U, const Vector& lo, const Vector& hi);
/// ‖U − proj_box(U − (Hess·U + lin))‖_∞.
double kkt_residual(const MpcProblem& p, const Vector& U);

QpSolution solve_box_qp(const MpcProblem& p, double tol = 1e-8, int max_iter = 5000,
                        const Vector* warm_start = nullptr);

struct ControlOutput {
  Vector u;
  double kkt_residual = 0;
  bool converged = true;
};

ControlOutput mpc_step(const LinearSurrogate& model, const Vector& x, const Matrix& ref, const MpcConfig& cfg);
ControlOutput mpc_step(const KoopmanModel& model, const Vector& x, const Matrix& ref, const MpcConfig& cfg);

/// Receives the current state and the next H reference states.
using Controller = std::function<ControlOutput(const Vector& x, const Matrix& ref_window)>;
using StepFunction = std::function<Vector(const Vector& x, const Vector& u)>;

Controller make_mpc_controller(LinearSurrogate model, MpcConfig cfg);

struct ClosedLoopResult {
  Matrix states;       // n_x × (steps taken + 1)
  Matrix controls;     // n_u × steps taken
  Matrix reference;    // n_x × (steps taken + 1), the padded reference actually tracked
  Vector errors;       // ‖x_{τ+1} − x^ref_{τ+1}‖ per step
  Vector kkt;          // solver residual per step
  double tracking_error = 0;
  int survival_steps = 0;
  int steps = 0;       // requested episode length
  bool truncated = false;
};

/**
 * Runs \p steps receding-horizon steps from \p x0. Column τ of \p reference is
 * the target at time τ; it is padded by holding its last column.
 */
ClosedLoopResult run_closed_loop(const StepFunction& step, const Controller& controller, const Vector& x0,
                                 const Matrix& reference, int steps, int H,
                                 double fail_threshold = std::numeric_limits<double>::infinity());
ClosedLoopResult run_closed_loop(const EnvSpec& env, const Controller& controller, const Vector& x0,
                                 const Matrix& reference, int steps, int H,
                                 double fail_threshold = std::numeric_limits<double>::infinity());

/// θ = 0.8 sin(0.5 t) with matching ω for each pendulum link, over columns t = 0..count-1.
Matrix sinusoid_reference(const EnvSpec& env, int count);

Json to_json(const ClosedLoopResult& r);
/// Columns t, x_i, u_i, ref_i, error, kkt_residual; one row per step.
std::string closed_loop_csv(const ClosedLoopResult& r);

/// Best first control among \p n_samples uniform sequences rolled through the NNDM.
Vector random_shooting_control(const NndmModel& nndm, const Vector& x, const Matrix& ref, int H, int n_samples,
                               std::uint64_t seed, const Vector& u_min, const Vector& u_max);

Controller make_shooting_controller(NndmModel nndm, int H, int n_samples, std::uint64_t seed, Vector u_min,
                                    Vector u_max);

}  // namespace koopman

#endif  // KOOPMAN_MPC_HPP
