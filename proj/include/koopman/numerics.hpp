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
#ifndef KOOPMAN_NUMERICS_HPP
#define KOOPMAN_NUMERICS_HPP

/**
 * @file
 * @brief Dense kernels shared by the rest of the library: Jacobi SVD, cyclic
 * Jacobi symmetric eigensolver, pseudoinverse, condition numbers and central
 * finite differences.
 *
 * All kernels are templated on the Eigen expression type so they accept blocks,
 * maps and products without forcing a temporary at the call site.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace koopman {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Raised when an iterative kernel hits its iteration cap.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, int iterations)
      : std::runtime_error(what + " did not converge after " + std::to_string(iterations) +
                           " sweeps"),
        iterations_(iterations) {}
  int iterations() const { return iterations_; }

 private:
  int iterations_;
};

struct JacobiOptions {
  int max_sweeps = 100;
  double tol = 1e-12;  // raised to a few ulps for scalars too coarse to reach it
};

namespace detail {
template <typename Scalar>
Scalar jacobi_tol(const JacobiOptions& opt) {
  return std::max(Scalar(opt.tol), Scalar(8) * std::numeric_limits<Scalar>::epsilon());
}
}  // namespace detail

/// Thin SVD M = U diag(S) Vt with k = min(rows, cols) singular values, descending.
template <typename Scalar>
struct Svd {
  MatrixX<Scalar> U;
  VectorX<Scalar> S;
  MatrixX<Scalar> Vt;
};

namespace detail {

// Replaces the flagged columns of Q with an orthonormal completion of the others.
template <typename Scalar>
void complete_orthonormal(MatrixX<Scalar>& Q, const std::vector<bool>& valid) {
  const Eigen::Index m = Q.rows();
  Eigen::Index probe = 0;
  for (Eigen::Index j = 0; j < Q.cols(); ++j) {
    if (valid[j]) continue;
    for (; probe < m; ++probe) {
      VectorX<Scalar> v = VectorX<Scalar>::Unit(m, probe);
      for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index i = 0; i < Q.cols(); ++i) {
          if (i == j || (!valid[i] && i > j)) continue;
          v -= Q.col(i).dot(v) * Q.col(i);
        }
      }
      const Scalar nv = v.norm();
      if (nv > Scalar(1e-8)) {
        Q.col(j) = v / nv;
        ++probe;
        break;
      }
    }
  }
}

// One-sided (Hestenes) Jacobi on a tall matrix; rows >= cols.
template <typename Scalar>
Svd<Scalar> jacobi_svd_tall(MatrixX<Scalar> W, const JacobiOptions& opt) {
  const Eigen::Index n = W.cols();
  MatrixX<Scalar> V = MatrixX<Scalar>::Identity(n, n);

  const Scalar tol = jacobi_tol<Scalar>(opt);
  bool converged = n < 2;
  int sweep = 0;
  for (; sweep < opt.max_sweeps && !converged; ++sweep) {
    Scalar worst = 0;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar alpha = W.col(p).squaredNorm();
        const Scalar beta = W.col(q).squaredNorm();
        const Scalar gamma = W.col(p).dot(W.col(q));
        if (alpha == Scalar(0) || beta == Scalar(0)) continue;
        const Scalar rel = std::abs(gamma) / std::sqrt(alpha * beta);
        worst = std::max(worst, rel);
        if (rel <= tol) continue;
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar t = (zeta >= 0 ? Scalar(1) : Scalar(-1)) /
                         (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
        const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
        const Scalar s = c * t;
        for (Eigen::Index i = 0; i < W.rows(); ++i) {
          const Scalar wp = W(i, p), wq = W(i, q);
          W(i, p) = c * wp - s * wq;
          W(i, q) = s * wp + c * wq;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
          const Scalar vp = V(i, p), vq = V(i, q);
          V(i, p) = c * vp - s * vq;
          V(i, q) = s * vp + c * vq;
        }
      }
    }
    converged = worst <= tol;
  }
  if (!converged) throw ConvergenceError("one-sided Jacobi SVD", sweep);

  VectorX<Scalar> sigma = W.colwise().norm().transpose();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return sigma(a) > sigma(b); });

  Svd<Scalar> out;
  out.U.resize(W.rows(), n);
  out.S.resize(n);
  MatrixX<Scalar> Vs(n, n);
  const Scalar smax = n > 0 ? sigma(order[0]) : Scalar(0);
  std::vector<bool> valid(static_cast<std::size_t>(n), true);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index j = order[static_cast<std::size_t>(k)];
    out.S(k) = sigma(j);
    Vs.col(k) = V.col(j);
    if (sigma(j) > smax * Scalar(1e-14) && sigma(j) > std::numeric_limits<Scalar>::min()) {
      out.U.col(k) = W.col(j) / sigma(j);
    } else {
      out.U.col(k).setZero();
      valid[static_cast<std::size_t>(k)] = false;
    }
  }
  complete_orthonormal(out.U, valid);
  out.Vt = Vs.transpose();
  return out;
}

}  // namespace detail

/**
 * @brief Thin singular value decomposition by one-sided Jacobi rotations.
 *
 * Wide inputs are handled through the transpose. Throws ConvergenceError after
 * opt.max_sweeps sweeps without reaching opt.tol relative column coupling.
 */
template <typename Derived>
Svd<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& M, const JacobiOptions& opt = {}) {
  using Scalar = typename Derived::Scalar;
  if (!M.allFinite()) throw std::invalid_argument("svd: input has non-finite entries");
  if (M.rows() >= M.cols()) return detail::jacobi_svd_tall<Scalar>(MatrixX<Scalar>(M), opt);
  Svd<Scalar> t = detail::jacobi_svd_tall<Scalar>(MatrixX<Scalar>(M.transpose()), opt);
  return {t.Vt.transpose(), t.S, t.U.transpose()};
}

/// Symmetric eigendecomposition M = V diag(values) Vᵀ, values ascending.
template <typename Scalar>
struct SymEig {
  VectorX<Scalar> values;
  MatrixX<Scalar> vectors;
};

/// Largest entrywise asymmetry relative to the largest entry magnitude.
template <typename Derived>
typename Derived::Scalar asymmetry(const Eigen::MatrixBase<Derived>& M) {
  using Scalar = typename Derived::Scalar;
  const Scalar scale = std::max(Scalar(1), M.cwiseAbs().maxCoeff());
  return (M - M.transpose()).cwiseAbs().maxCoeff() / scale;
}

/**
 * @brief Cyclic Jacobi eigensolver for symmetric matrices.
 *
 * Converges when the off-diagonal Frobenius norm drops below opt.tol times the
 * full Frobenius norm.
 */
template <typename Derived>
SymEig<typename Derived::Scalar> sym_eig(const Eigen::MatrixBase<Derived>& M, const JacobiOptions& opt = {}) {
  using Scalar = typename Derived::Scalar;
  if (M.rows() != M.cols()) throw std::invalid_argument("sym_eig: matrix is not square");
  if (!M.allFinite()) throw std::invalid_argument("sym_eig: input has non-finite entries");
  if (asymmetry(M) > Scalar(1e-9)) throw std::invalid_argument("sym_eig: matrix is not symmetric");

  const Eigen::Index n = M.rows();
  MatrixX<Scalar> S = (M + M.transpose()) / Scalar(2);
  MatrixX<Scalar> V = MatrixX<Scalar>::Identity(n, n);
  const Scalar total = S.norm();

  auto off_norm = [&] {
    Scalar acc = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        if (i != j) acc += S(i, j) * S(i, j);
    return std::sqrt(acc);
  };

  int sweep = 0;
  bool converged = total == Scalar(0) || off_norm() <= detail::jacobi_tol<Scalar>(opt) * total;
  for (; sweep < opt.max_sweeps && !converged; ++sweep) {
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar apq = S(p, q);
        if (apq == Scalar(0)) continue;
        const Scalar theta = (S(q, q) - S(p, p)) / (Scalar(2) * apq);
        const Scalar t = (theta >= 0 ? Scalar(1) : Scalar(-1)) /
                         (std::abs(theta) + std::sqrt(theta * theta + Scalar(1)));
        const Scalar c = Scalar(1) / std::sqrt(t * t + Scalar(1));
        const Scalar s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar skp = S(k, p), skq = S(k, q);
          S(k, p) = c * skp - s * skq;
          S(k, q) = s * skp + c * skq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar spk = S(p, k), sqk = S(q, k);
          S(p, k) = c * spk - s * sqk;
          S(q, k) = s * spk + c * sqk;
        }
        S(p, q) = S(q, p) = Scalar(0);
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
    converged = off_norm() <= detail::jacobi_tol<Scalar>(opt) * total;
  }
  if (!converged) throw ConvergenceError("cyclic Jacobi eigensolver", sweep);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return S(a, a) < S(b, b); });
  SymEig<Scalar> out{VectorX<Scalar>(n), MatrixX<Scalar>(n, n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values(k) = S(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
    out.vectors.col(k) = V.col(order[static_cast<std::size_t>(k)]);
  }
  return out;
}

/**
 * @brief Pseudoinverse of M.
 *
 * With ridge > 0 this is the Tikhonov left inverse (MᵀM + ridge·I)⁻¹Mᵀ. With
 * ridge == 0 it is the Moore–Penrose inverse from the SVD, dropping singular
 * values below 1e-12 times the largest.
 */
template <typename Derived>
MatrixX<typename Derived::Scalar> pinv(const Eigen::MatrixBase<Derived>& M, typename Derived::Scalar ridge = 0) {
  using Scalar = typename Derived::Scalar;
  if (ridge < Scalar(0)) throw std::invalid_argument("pinv: ridge must be non-negative");
  if (ridge > Scalar(0)) {
    MatrixX<Scalar> normal = M.transpose() * M;
    normal.diagonal().array() += ridge;
    return normal.ldlt().solve(M.transpose());
  }
  const Svd<Scalar> d = svd(M);
  const Scalar cut = d.S.size() > 0 ? d.S(0) * Scalar(1e-12) : Scalar(0);
  VectorX<Scalar> inv = VectorX<Scalar>::Zero(d.S.size());
  for (Eigen::Index i = 0; i < d.S.size(); ++i)
    if (d.S(i) > cut && d.S(i) > Scalar(0)) inv(i) = Scalar(1) / d.S(i);
  return d.Vt.transpose() * inv.asDiagonal() * d.U.transpose();
}

/// λ_max/λ_min of a symmetric matrix; +∞ when λ_min ≤ 1e-300.
template <typename Derived>
typename Derived::Scalar cond_spd(const Eigen::MatrixBase<Derived>& M) {
  using Scalar = typename Derived::Scalar;
  const SymEig<Scalar> e = sym_eig(M);
  if (e.values.size() == 0) throw std::invalid_argument("cond_spd: empty matrix");
  const Scalar lo = e.values(0);
  const Scalar hi = e.values(e.values.size() - 1);
  if (lo <= Scalar(1e-300)) return std::numeric_limits<Scalar>::infinity();
  return hi / lo;
}

/// Raised by finite_diff_grad when the objective is not finite at a probe point.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, Eigen::Index index)
      : std::runtime_error(what + " (index " + std::to_string(index) + ")"), index_(index) {}
  Eigen::Index index() const { return index_; }

 private:
  Eigen::Index index_;
};

/// Central-difference gradient (f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h.
inline Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  if (!(h > 0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + h;
    const double fp = f(probe);
    probe(i) = x(i) - h;
    const double fm = f(probe);
    probe(i) = x(i);
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NonFiniteError("finite_diff_grad: objective is not finite", i);
    g(i) = (fp - fm) / (2 * h);
  }
  return g;
}

}  // namespace koopman

#endif  // KOOPMAN_NUMERICS_HPP
