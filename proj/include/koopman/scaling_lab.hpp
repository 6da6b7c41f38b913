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
#ifndef KOOPMAN_SCALING_LAB_HPP
#define KOOPMAN_SCALING_LAB_HPP

/**
 * @file
 * @brief Experiment harness: (m, n_mult, seed, variant) grids, the coupled
 * m = coeff·n·ln n schedule, scaling-law fits and result persistence.
 */

#include "koopman/dataset.hpp"
#include "koopman/koopman_net.hpp"
#include "koopman/power_law.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace koopman {

/// Loss variants: which regularizers are switched on.
inline const std::vector<std::string> kVariants = {"baseline", "+cov", "+ctrl", "+both"};

/// Copy of \p base with the regularizer weights of \p variant (disabled terms get weight 0).
TrainConfig apply_variant(const TrainConfig& base, const std::string& variant);

struct GridConfig {
  EnvSpec env = EnvSpec::damped_pendulum();
  std::vector<Eigen::Index> m_values{1000, 4000, 16000, 64000, 140000};
  std::vector<int> n_mult_values{1, 2, 4, 8, 16};
  int seeds = 5;
  std::uint64_t base_seed = 0;
  std::vector<std::string> variants{"baseline"};
  TrainConfig train;
  /// When set, (n, m) pairs follow coupled_schedule instead of the m × n_mult product.
  std::optional<double> coupled_coeff;
  /// Drops m values above 64000 (desk-scale budget).
  bool desk_scale = false;
  int workers = 1;

  void validate() const;
};

Json to_json(const GridConfig& cfg);
GridConfig grid_config_from_json(const Json& j);

struct GridCoordinate {
  Eigen::Index m = 0;
  int n_mult = 0;
  int seed = 0;  // index in [0, seeds)
  std::string variant;
};

/// Every coordinate of the grid in a fixed order.
std::vector<GridCoordinate> grid_coordinates(const GridConfig& cfg);

/// Dataset and training seeds of a seed index; shared by every variant and n_mult.
std::uint64_t dataset_seed(const GridConfig& cfg, int seed_index);
std::uint64_t training_seed(const GridConfig& cfg, int seed_index);

struct ExperimentRecord {
  std::string env;
  std::string variant;
  Eigen::Index m = 0;
  int n_mult = 0;
  int n = 0;
  int seed = 0;
  double eps_test = 0;
  double kappa_G = 0;
  double kappa_BtB = 0;
  double mean_offdiag_corr = 0;
  double wall_s = 0;
  std::string status;  // "ok" or "failed: <reason>"

  bool ok() const { return status == "ok"; }
  bool operator==(const ExperimentRecord&) const = default;
};

/// Label of the environment used in records, e.g. "polynomial-npoly10".
std::string env_label(const EnvSpec& env);

/// Model file of a record, relative to the grid output directory.
std::filesystem::path model_path(const ExperimentRecord& r);

/// Runs one coordinate: data, training, evaluation and diagnostics.
ExperimentRecord run_coordinate(const GridConfig& cfg, const GridCoordinate& c,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt);

inline constexpr const char* kResultsFile = "results.csv";

/**
 * Runs every coordinate without a record in out_dir/results.csv, appending
 * each new record as it completes. Returns the records of all grid
 * coordinates in grid order.
 */
std::vector<ExperimentRecord> run_grid(const GridConfig& cfg, const std::filesystem::path& out_dir);

/// (n, m) pairs with m = max(32, round(coeff·n·ln n)).
std::vector<std::pair<int, Eigen::Index>> coupled_schedule(double coeff, const std::vector<int>& n_values);

std::string records_csv_header();
std::string to_csv_row(const ExperimentRecord& r);
std::string records_to_csv(const std::vector<ExperimentRecord>& records);
std::vector<ExperimentRecord> records_from_csv(const std::string& text);
std::vector<ExperimentRecord> read_records(const std::filesystem::path& path);

enum class ScalingAxis { M, N, Coupled };
ScalingAxis scaling_axis_from_string(const std::string& s);
std::string to_string(ScalingAxis axis);

/// Points with m below this are left out of latent-dimension fits.
inline constexpr Eigen::Index kMinSamplesForNFit = 10000;

/**
 * Scaling fits keyed "env|variant|axis|<fixed coordinates>".
 *
 * Axis M fits ε against m per (n_mult, seed); axis N fits against n per
 * (m, seed), skipping m < 1e4; axis Coupled fits against n per seed. Each
 * (env, variant) also gets an "…|mean" entry averaging A, α, C and r² over its
 * per-group fits. Groups with fewer than 3 distinct values or failed runs are skipped.
 */
std::map<std::string, PowerLawFit> fit_records(const std::vector<ExperimentRecord>& records, ScalingAxis axis);

Json fits_to_json(const std::map<std::string, PowerLawFit>& fits);

/// Writes out_dir/records.csv and out_dir/fits.json.
void export_results(const std::vector<ExperimentRecord>& records, const std::map<std::string, PowerLawFit>& fits,
                    const std::filesystem::path& out_dir);

}  // namespace koopman

#endif  // KOOPMAN_SCALING_LAB_HPP
