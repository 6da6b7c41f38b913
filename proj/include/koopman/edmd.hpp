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
#ifndef KOOPMAN_EDMD_HPP
#define KOOPMAN_EDMD_HPP

/**
 * @file
 * @brief Extended DMD with explicit dictionaries: K = A_cross (G + ridge I)⁻¹,
 * where G = (1/m) Σ s sᵀ and A_cross = (1/m) Σ Φ(x⁺) sᵀ over the train
 * transitions, and s = [Φ(x); u] is the lifted state with the raw control
 * appended.
 */

#include "koopman/dataset.hpp"
#include "koopman/koopman_net.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace koopman {

enum class DictionaryKind { Identity, Polynomial, StateAugmentedNeural };

class Dictionary {
 public:
  static Dictionary identity(int n_in);
  /// Constant plus every monomial of total degree <= max_degree, graded-lex order.
  static Dictionary polynomial(int n_in, int max_degree);
  static Dictionary neural(std::shared_ptr<const KoopmanModel> model);

  DictionaryKind kind() const { return kind_; }
  int n_in() const { return n_in_; }
  int n() const { return n_; }
  int max_degree() const { return max_degree_; }
  const std::vector<std::vector<int>>& exponents() const { return exponents_; }
  const std::shared_ptr<const KoopmanModel>& model() const { return model_; }

  /// Rows of the lifted vector that hold the raw state coordinates.
  std::vector<int> state_rows() const;

  Vector lift(const Vector& x) const;
  /// Lifts every column of X.
  Matrix lift(const Matrix& X) const;

  Json descriptor() const;

 private:
  DictionaryKind kind_ = DictionaryKind::Identity;
  int n_in_ = 0;
  int n_ = 0;
  int max_degree_ = 1;
  std::vector<std::vector<int>> exponents_;
  std::shared_ptr<const KoopmanModel> model_;
};

/// Exponent vectors of all monomials in n_in variables of degree <= max_degree, graded-lex.
std::vector<std::vector<int>> graded_lex_exponents(int n_in, int max_degree);

/// One transition in original coordinates.
struct Transition {
  Vector x, u, x_next;
};

/// Train transitions of a dataset in storage order.
std::vector<Transition> transitions(const Dataset& data);

struct GramPair {
  Matrix G;       // (n + n_u) square
  Matrix A_cross; // n × (n + n_u)
};

/**
 * Mean outer products over the samples. Samples are summed in a canonical
 * order (lexicographic on the raw sample values) with pairwise summation, so
 * the result is bit-identical under any permutation of the input.
 */
GramPair gram_matrices(const std::vector<Transition>& samples, const Dictionary& dict);
GramPair gram_matrices(const Dataset& data, const Dictionary& dict);

class IllConditionedError : public std::runtime_error {
 public:
  explicit IllConditionedError(double lambda_min)
      : std::runtime_error("edmd_fit: Gram matrix is numerically singular (lambda_min = " +
                           std::to_string(lambda_min) + ")"),
        lambda_min_(lambda_min) {}
  double lambda_min() const { return lambda_min_; }

 private:
  double lambda_min_;
};

struct EdmdModel {
  Dictionary dict;
  int n_u = 0;
  Matrix K;  // n × (n + n_u)
  Matrix A;  // n × n
  Matrix B;  // n × n_u
  double ridge = 0;
  double lambda_min_G = 0;
  double kappa_G = 0;
};

/// 1e-8·trace(G)/n for neural features, 0 for Identity and Polynomial.
double default_ridge(const Dictionary& dict, const Matrix& G);

EdmdModel edmd_fit(const std::vector<Transition>& samples, const Dictionary& dict, int n_u,
                   std::optional<double> ridge = std::nullopt);
EdmdModel edmd_fit(const Dataset& data, const Dictionary& dict, std::optional<double> ridge = std::nullopt);

/// (1/m) Σ ‖x⁺ − x̂⁺‖², the objective restricted to the state rows of the lift.
double state_fit_residual(const EdmdModel& model, const std::vector<Transition>& samples);

struct EdmdRollout {
  Matrix x;  // n_x × steps actually produced
  bool truncated = false;
};

/// Lifts x0 once and iterates the latent linear map T times.
EdmdRollout edmd_rollout(const EdmdModel& model, const Vector& x0, const Matrix& controls, int T);

std::string serialize_edmd(const EdmdModel& model);
EdmdModel deserialize_edmd(const std::string& bytes);

}  // namespace koopman

#endif  // KOOPMAN_EDMD_HPP
