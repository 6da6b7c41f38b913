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
#ifndef KOOPMAN_DATASET_HPP
#define KOOPMAN_DATASET_HPP

#include "koopman/envs.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace koopman {

/// states: n_x × (L+1), controls: n_u × L, one column per time step.
struct Trajectory {
  Matrix states;
  Matrix controls;

  Eigen::Index length() const { return controls.cols(); }
  bool operator==(const Trajectory& o) const { return states == o.states && controls == o.controls; }
};

/// Re-integrates a trajectory from its first state and recorded controls.
Trajectory rollout(const EnvSpec& env, const Vector& x0, const Matrix& controls);

struct SamplingBox {
  Vector state_lo, state_hi, control_lo, control_hi;
};

/**
 * Uniformly sampled windows split into a train part (exactly m transitions)
 * and a held-out test part. Every window is an independent trajectory.
 */
struct Dataset {
  EnvSpec env;
  std::uint64_t seed = 0;
  int window = 0;  // transitions per full window
  std::vector<Trajectory> windows;
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> test_index;

  /// Total number of train transitions.
  Eigen::Index m() const;

  std::vector<const Trajectory*> train() const;
  std::vector<const Trajectory*> test() const;

  bool operator==(const Dataset& o) const;
};

inline constexpr int kTestTransitions = 2048;
inline constexpr int kMaxResamples = 100;

/**
 * Strategy-I generation: initial states and per-step controls drawn uniformly
 * from the sampling box (the environment's own box unless overridden).
 *
 * Train window i uses its own sub-stream of \p seed, so the windows of a
 * smaller m are a prefix of those of a larger m. The test split comes from an
 * independent sub-seed and holds ceil(2048 / window) full windows.
 */
Dataset generate_dataset(const EnvSpec& env, Eigen::Index m, int window, std::uint64_t seed,
                         const std::optional<SamplingBox>& box = std::nullopt);

std::string serialize_dataset(const Dataset& data);
Dataset deserialize_dataset(const std::string& bytes);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace koopman

#endif  // KOOPMAN_DATASET_HPP
