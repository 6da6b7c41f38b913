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
#ifndef KOOPMAN_ENVS_HPP
#define KOOPMAN_ENVS_HPP

/**
 * @file
 * @brief Ground-truth systems: the discrete-time polynomial map, a damped
 * pendulum and a double pendulum, plus the fixed-step RK4 integrator used to
 * discretise the continuous ones.
 */

#include "koopman/binary_io.hpp"
#include "koopman/numerics.hpp"

#include <stdexcept>
#include <string>

namespace koopman {

enum class EnvKind { Polynomial, DampedPendulum, DoublePendulum };

std::string to_string(EnvKind kind);
/// Accepts "polynomial", "damped-pendulum", "double-pendulum".
EnvKind env_kind_from_string(const std::string& name);

struct EnvSpec {
  EnvKind kind = EnvKind::Polynomial;
  int n_x = 3;
  int n_u = 0;
  double dt = 0.0;  // 0 for the discrete-time polynomial map

  // Polynomial map: x3 gains sum_{p=1}^{n_poly-2} b_p x1^p with a shared b_p.
  int n_poly = 3;
  double b_p = 0.9;

  // Pendulum constants; the double pendulum uses unit masses and lengths.
  double gravity = 9.81;
  double length = 1.0;
  double mass = 1.0;
  double damping = 0.1;

  // Sampling boxes for initial states and per-step controls.
  Vector state_lo, state_hi;
  Vector control_lo, control_hi;

  static EnvSpec polynomial(int n_poly = 3, double b_p = 0.9);
  static EnvSpec damped_pendulum();
  static EnvSpec double_pendulum();
  static EnvSpec by_name(const std::string& name);

  bool continuous() const { return kind != EnvKind::Polynomial; }

  /// Throws std::invalid_argument when dimensions or boxes are inconsistent with kind.
  void validate() const;
};

Json to_json(const EnvSpec& spec);
EnvSpec env_from_json(const Json& j);

/// Integration produced a non-finite state.
class IntegrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// (0.85 x1, 0.90 x2, 0.90 x3 + sum_{p=1}^{n_poly-2} b_p x1^p)
Vector poly_step(const Vector& x, const EnvSpec& spec);

/// (ω, −(g/l) sin θ − c ω + u/(m l²))
Vector pendulum_deriv(const Vector& x, const Vector& u, const EnvSpec& spec);

/**
 * Point-mass two-link pendulum in absolute angles measured from the downward
 * vertical, x = (θ1, θ2, ω1, ω2). Torques and viscous damping act on the
 * generalised coordinates θ1, θ2.
 */
Vector double_pendulum_deriv(const Vector& x, const Vector& u, const EnvSpec& spec);

/// Total mechanical energy of the double pendulum (kinetic + potential).
double double_pendulum_energy(const Vector& x, const EnvSpec& spec);

/// Classical RK4 with the control held constant over the step.
template <typename Deriv>
Vector rk4_step(Deriv&& deriv, const Vector& x, const Vector& u, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("rk4_step: dt must be positive");
  const Vector k1 = deriv(x, u);
  const Vector k2 = deriv(Vector(x + 0.5 * dt * k1), u);
  const Vector k3 = deriv(Vector(x + 0.5 * dt * k2), u);
  const Vector k4 = deriv(Vector(x + dt * k3), u);
  if (!k1.allFinite() || !k2.allFinite() || !k3.allFinite() || !k4.allFinite())
    throw IntegrationError("rk4_step: non-finite stage derivative");
  Vector next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw IntegrationError("rk4_step: non-finite state");
  return next;
}

/// Continuous-time vector field of a pendulum environment.
Vector env_deriv(const EnvSpec& spec, const Vector& x, const Vector& u);

/// One step of the environment's discrete-time map (RK4 for continuous kinds).
Vector env_step(const EnvSpec& spec, const Vector& x, const Vector& u);

}  // namespace koopman

#endif  // KOOPMAN_ENVS_HPP
