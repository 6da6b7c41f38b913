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
#include "koopman/envs.hpp"

#include <cmath>
#include <numbers>

namespace koopman {

std::string to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::Polynomial: return "polynomial";
    case EnvKind::DampedPendulum: return "damped-pendulum";
    case EnvKind::DoublePendulum: return "double-pendulum";
  }
  return "unknown";
}

EnvKind env_kind_from_string(const std::string& name) {
  if (name == "polynomial") return EnvKind::Polynomial;
  if (name == "damped-pendulum") return EnvKind::DampedPendulum;
  if (name == "double-pendulum") return EnvKind::DoublePendulum;
  throw std::invalid_argument("unknown environment '" + name + "'");
}

EnvSpec EnvSpec::polynomial(int n_poly, double b_p) {
  EnvSpec s;
  s.kind = EnvKind::Polynomial;
  s.n_x = 3;
  s.n_u = 0;
  s.dt = 0.0;
  s.n_poly = n_poly;
  s.b_p = b_p;
  s.state_lo = Vector::Constant(3, -1.0);
  s.state_hi = Vector::Constant(3, 1.0);
  s.control_lo = Vector(0);
  s.control_hi = Vector(0);
  return s;
}

EnvSpec EnvSpec::damped_pendulum() {
  EnvSpec s;
  s.kind = EnvKind::DampedPendulum;
  s.n_x = 2;
  s.n_u = 1;
  s.dt = 0.02;
  s.gravity = 9.81;
  s.length = 1.0;
  s.mass = 1.0;
  s.damping = 0.1;
  s.state_lo = (Vector(2) << -std::numbers::pi, -4.0).finished();
  s.state_hi = (Vector(2) << std::numbers::pi, 4.0).finished();
  s.control_lo = Vector::Constant(1, -2.0);
  s.control_hi = Vector::Constant(1, 2.0);
  return s;
}

EnvSpec EnvSpec::double_pendulum() {
  EnvSpec s;
  s.kind = EnvKind::DoublePendulum;
  s.n_x = 4;
  s.n_u = 2;
  s.dt = 0.01;
  s.gravity = 9.81;
  s.length = 1.0;
  s.mass = 1.0;
  s.damping = 0.05;
  s.state_lo = (Vector(4) << -std::numbers::pi, -std::numbers::pi, -4.0, -4.0).finished();
  s.state_hi = (Vector(4) << std::numbers::pi, std::numbers::pi, 4.0, 4.0).finished();
  s.control_lo = Vector::Constant(2, -1.0);
  s.control_hi = Vector::Constant(2, 1.0);
  return s;
}

EnvSpec EnvSpec::by_name(const std::string& name) {
  switch (env_kind_from_string(name)) {
    case EnvKind::Polynomial: return polynomial();
    case EnvKind::DampedPendulum: return damped_pendulum();
    case EnvKind::DoublePendulum: return double_pendulum();
  }
  throw std::invalid_argument("unknown environment '" + name + "'");
}

void EnvSpec::validate() const {
  const auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("EnvSpec: ") + what);
  };
  switch (kind) {
    case EnvKind::Polynomial:
      require(n_x == 3 && n_u == 0, "polynomial system has n_x = 3, n_u = 0");
      require(n_poly >= 3, "polynomial degree n_poly must be >= 3");
      break;
    case EnvKind::DampedPendulum:
      require(n_x == 2 && n_u == 1, "damped pendulum has n_x = 2, n_u = 1");
      require(dt > 0, "dt must be positive");
      require(length > 0 && mass > 0, "length and mass must be positive");
      break;
    case EnvKind::DoublePendulum:
      require(n_x == 4 && n_u == 2, "double pendulum has n_x = 4, n_u = 2");
      require(dt > 0, "dt must be positive");
      require(length > 0 && mass > 0, "length and mass must be positive");
      break;
  }
  require(state_lo.size() == n_x && state_hi.size() == n_x, "state box has wrong dimension");
  require(control_lo.size() == n_u && control_hi.size() == n_u, "control box has wrong dimension");
  require((state_lo.array() <= state_hi.array()).all(), "state box lower bound exceeds upper bound");
  require((control_lo.array() <= control_hi.array()).all(), "control box lower bound exceeds upper bound");
}

namespace {

Json vec_json(const Vector& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector json_vec(const Json& j, const std::string& name) {
  const auto values = header_field<std::vector<double>>(j, name);
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

Json to_json(const EnvSpec& s) {
  return Json{{"kind", to_string(s.kind)},
              {"n_x", s.n_x},
              {"n_u", s.n_u},
              {"dt", s.dt},
              {"n_poly", s.n_poly},
              {"b_p", s.b_p},
              {"gravity", s.gravity},
              {"length", s.length},
              {"mass", s.mass},
              {"damping", s.damping},
              {"state_lo", vec_json(s.state_lo)},
              {"state_hi", vec_json(s.state_hi)},
              {"control_lo", vec_json(s.control_lo)},
              {"control_hi", vec_json(s.control_hi)}};
}

EnvSpec env_from_json(const Json& j) {
  EnvSpec s;
  try {
    s.kind = env_kind_from_string(header_field<std::string>(j, "kind"));
  } catch (const std::invalid_argument& e) {
    throw FormatError("kind", e.what());
  }
  s.n_x = header_field<int>(j, "n_x");
  s.n_u = header_field<int>(j, "n_u");
  s.dt = header_field<double>(j, "dt");
  s.n_poly = header_field<int>(j, "n_poly");
  s.b_p = header_field<double>(j, "b_p");
  s.gravity = header_field<double>(j, "gravity");
  s.length = header_field<double>(j, "length");
  s.mass = header_field<double>(j, "mass");
  s.damping = header_field<double>(j, "damping");
  s.state_lo = json_vec(j, "state_lo");
  s.state_hi = json_vec(j, "state_hi");
  s.control_lo = json_vec(j, "control_lo");
  s.control_hi = json_vec(j, "control_hi");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError("env", e.what());
  }
  return s;
}

Vector poly_step(const Vector& x, const EnvSpec& spec) {
  if (x.size() != 3) throw std::invalid_argument("poly_step: state must have 3 entries");
  double coupling = 0.0;
  double power = 1.0;
  for (int p = 1; p <= spec.n_poly - 2; ++p) {
    power *= x(0);
    coupling += spec.b_p * power;
  }
  Vector next(3);
  next << 0.85 * x(0), 0.90 * x(1), 0.90 * x(2) + coupling;
  return next;
}

Vector pendulum_deriv(const Vector& x, const Vector& u, const EnvSpec& spec) {
  const double theta = x(0), omega = x(1);
  const double torque = u.size() > 0 ? u(0) : 0.0;
  Vector d(2);
  d << omega, -(spec.gravity / spec.length) * std::sin(theta) - spec.damping * omega +
                  torque / (spec.mass * spec.length * spec.length);
  return d;
}

Vector double_pendulum_deriv(const Vector& x, const Vector& u, const EnvSpec& spec) {
  const double m1 = spec.mass, m2 = spec.mass, l1 = spec.length, l2 = spec.length, g = spec.gravity;
  const double t1 = x(0), t2 = x(1), w1 = x(2), w2 = x(3);
  const double tau1 = u.size() > 0 ? u(0) : 0.0;
  const double tau2 = u.size() > 1 ? u(1) : 0.0;
  const double delta = t1 - t2;

  const double m11 = (m1 + m2) * l1 * l1;
  const double m12 = m2 * l1 * l2 * std::cos(delta);
  const double m22 = m2 * l2 * l2;
  const double det = m11 * m22 - m12 * m12;
  if (std::abs(det) <= 1e-12) throw IntegrationError("double_pendulum_deriv: singular mass matrix");

  const double f1 = -m2 * l1 * l2 * w2 * w2 * std::sin(delta) - (m1 + m2) * g * l1 * std::sin(t1) -
                    spec.damping * w1 + tau1;
  const double f2 = m2 * l1 * l2 * w1 * w1 * std::sin(delta) - m2 * g * l2 * std::sin(t2) -
                    spec.damping * w2 + tau2;

  Vector d(4);
  d << w1, w2, (m22 * f1 - m12 * f2) / det, (m11 * f2 - m12 * f1) / det;
  return d;
}

double double_pendulum_energy(const Vector& x, const EnvSpec& spec) {
  const double m1 = spec.mass, m2 = spec.mass, l1 = spec.length, l2 = spec.length, g = spec.gravity;
  const double t1 = x(0), t2 = x(1), w1 = x(2), w2 = x(3);
  const double kinetic = 0.5 * (m1 + m2) * l1 * l1 * w1 * w1 + 0.5 * m2 * l2 * l2 * w2 * w2 +
                         m2 * l1 * l2 * w1 * w2 * std::cos(t1 - t2);
  const double potential = -(m1 + m2) * g * l1 * std::cos(t1) - m2 * g * l2 * std::cos(t2);
  return kinetic + potential;
}

Vector env_deriv(const EnvSpec& spec, const Vector& x, const Vector& u) {
  switch (spec.kind) {
    case EnvKind::DampedPendulum: return pendulum_deriv(x, u, spec);
    case EnvKind::DoublePendulum: return double_pendulum_deriv(x, u, spec);
    case EnvKind::Polynomial: break;
  }
  throw std::invalid_argument("env_deriv: polynomial system is discrete-time");
}

Vector env_step(const EnvSpec& spec, const Vector& x, const Vector& u) {
  if (!spec.continuous()) return poly_step(x, spec);
  return rk4_step([&](const Vector& s, const Vector& a) { return env_deriv(spec, s, a); }, x, u, spec.dt);
}

}  // namespace koopman
