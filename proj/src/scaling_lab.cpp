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
#include "koopman/scaling_lab.hpp"

#include "koopman/diagnostics.hpp"
#include "koopman/rng.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

namespace koopman {

TrainConfig apply_variant(const TrainConfig& base, const std::string& variant) {
  TrainConfig c = base;
  const bool cov = variant == "+cov" || variant == "+both";
  const bool ctrl = variant == "+ctrl" || variant == "+both";
  if (!cov && !ctrl && variant != "baseline") throw std::invalid_argument("unknown loss variant '" + variant + "'");
  if (!cov) c.w_cov = 0.0;
  if (!ctrl) c.w_ctrl = 0.0;
  return c;
}

void GridConfig::validate() const {
  env.validate();
  train.validate();
  if (m_values.empty() || n_mult_values.empty() || variants.empty() || seeds < 1 || workers < 1)
    throw std::invalid_argument("GridConfig: every count must be >= 1");
  for (auto m : m_values)
    if (m < 1) throw std::invalid_argument("GridConfig: m values must be >= 1");
  for (int k : n_mult_values)
    if (k < 1) throw std::invalid_argument("GridConfig: n_mult values must be >= 1");
  for (const auto& v : variants) (void)apply_variant(train, v);
  if (coupled_coeff && !(*coupled_coeff > 0)) throw std::invalid_argument("GridConfig: coupled_coeff must be > 0");
}

Json to_json(const GridConfig& cfg) {
  Json j{{"env", to_json(cfg.env)},
         {"m_values", cfg.m_values},
         {"n_mult_values", cfg.n_mult_values},
         {"seeds", cfg.seeds},
         {"base_seed", cfg.base_seed},
         {"variants", cfg.variants},
         {"train", to_json(cfg.train)},
         {"desk_scale", cfg.desk_scale},
         {"workers", cfg.workers}};
  j["coupled_coeff"] = cfg.coupled_coeff ? Json(*cfg.coupled_coeff) : Json(nullptr);
  return j;
}

GridConfig grid_config_from_json(const Json& j) {
  if (!j.is_object()) throw FormatError("grid", "expected an object");
  static const std::set<std::string> known{"env",      "m_values", "n_mult_values", "seeds",         "base_seed",
                                           "variants", "train",    "desk_scale",    "coupled_coeff", "workers"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw FormatError(k, "unknown grid field");
  GridConfig c;
  if (j.contains("env")) c.env = env_from_json(j.at("env"));
  if (j.contains("m_values")) c.m_values = j.at("m_values").get<std::vector<Eigen::Index>>();
  if (j.contains("n_mult_values")) c.n_mult_values = j.at("n_mult_values").get<std::vector<int>>();
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<int>();
  if (j.contains("base_seed")) c.base_seed = j.at("base_seed").get<std::uint64_t>();
  if (j.contains("variants")) c.variants = j.at("variants").get<std::vector<std::string>>();
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("desk_scale")) c.desk_scale = j.at("desk_scale").get<bool>();
  if (j.contains("workers")) c.workers = j.at("workers").get<int>();
  if (j.contains("coupled_coeff") && !j.at("coupled_coeff").is_null())
    c.coupled_coeff = j.at("coupled_coeff").get<double>();
  c.validate();
  return c;
}

std::vector<GridCoordinate> grid_coordinates(const GridConfig& cfg) {
  std::vector<std::pair<Eigen::Index, int>> pairs;  // (m, n_mult)
  if (cfg.coupled_coeff) {
    for (int k : cfg.n_mult_values) {
      const int n = cfg.env.n_x * (1 + k);
      pairs.emplace_back(coupled_schedule(*cfg.coupled_coeff, {n}).front().second, k);
    }
  } else {
    for (auto m : cfg.m_values) {
      if (cfg.desk_scale && m > 64000) continue;
      for (int k : cfg.n_mult_values) pairs.emplace_back(m, k);
    }
  }
  std::vector<GridCoordinate> out;
  for (const auto& v : cfg.variants)
    for (const auto& [m, k] : pairs)
      for (int s = 0; s < cfg.seeds; ++s) out.push_back({m, k, s, v});
  return out;
}

std::uint64_t dataset_seed(const GridConfig& cfg, int seed_index) {
  return derive_seed(derive_seed(cfg.base_seed, 21), static_cast<std::uint64_t>(seed_index));
}

std::uint64_t training_seed(const GridConfig& cfg, int seed_index) {
  return derive_seed(derive_seed(cfg.base_seed, 22), static_cast<std::uint64_t>(seed_index));
}

std::string env_label(const EnvSpec& env) {
  if (env.kind == EnvKind::Polynomial) return "polynomial-npoly" + std::to_string(env.n_poly);
  return to_string(env.kind);
}

std::filesystem::path model_path(const ExperimentRecord& r) {
  std::string v = r.variant;
  for (char& c : v)
    if (c == '+') c = 'p';
  return std::filesystem::path("models") / (r.env + "_" + v + "_m" + std::to_string(r.m) + "_k" +
                                            std::to_string(r.n_mult) + "_s" + std::to_string(r.seed) + ".bin");
}

namespace {

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

}  // namespace

ExperimentRecord run_coordinate(const GridConfig& cfg, const GridCoordinate& c,
                                const std::optional<std::filesystem::path>& out_dir) {
  ExperimentRecord r;
  r.env = env_label(cfg.env);
  r.variant = c.variant;
  r.m = c.m;
  r.n_mult = c.n_mult;
  r.n = cfg.env.n_x * (1 + c.n_mult);
  r.seed = c.seed;
  r.eps_test = r.kappa_G = r.kappa_BtB = r.mean_offdiag_corr = std::numeric_limits<double>::quiet_NaN();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    TrainConfig tc = apply_variant(cfg.train, c.variant);
    tc.n_mult = c.n_mult;
    tc.seed = training_seed(cfg, c.seed);
    const Dataset data = generate_dataset(cfg.env, c.m, tc.T, dataset_seed(cfg, c.seed));
    auto [model, report] = train(data, tc);
    r.eps_test = report.eps_test;
    const DiagnosticsReport d = diagnose(model, data);
    r.kappa_G = d.kappa_G;
    r.kappa_BtB = d.kappa_BtB;
    r.mean_offdiag_corr = d.mean_abs_offdiag_corr;
    r.status = report.diverged ? "failed: training diverged" : "ok";
    if (out_dir) save_model(model, *out_dir / model_path(r));
  } catch (const std::exception& e) {
    r.status = sanitize(std::string("failed: ") + e.what());
  }
  r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<ExperimentRecord> run_grid(const GridConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const auto results = out_dir / kResultsFile;
  using Key = std::tuple<std::string, std::string, Eigen::Index, int, int>;
  auto key = [](const ExperimentRecord& r) { return Key{r.env, r.variant, r.m, r.n_mult, r.seed}; };

  std::map<Key, ExperimentRecord> done;
  if (std::filesystem::exists(results))
    for (auto& r : read_records(results)) done.emplace(key(r), r);

  const std::string env = env_label(cfg.env);
  const std::vector<GridCoordinate> coords = grid_coordinates(cfg);
  std::vector<GridCoordinate> todo;
  for (const auto& c : coords)
    if (!done.count(Key{env, c.variant, c.m, c.n_mult, c.seed})) todo.push_back(c);

  std::mutex append_mutex;
  {
    std::ofstream out(results, std::ios::app);
    if (!out) throw std::runtime_error("run_grid: cannot open " + results.string());
    if (std::filesystem::file_size(results) == 0) out << records_csv_header();
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      ExperimentRecord r = run_coordinate(cfg, todo[i], out_dir);
      std::lock_guard lock(append_mutex);
      std::ofstream out(results, std::ios::app);
      out << to_csv_row(r);
      done.emplace(key(r), std::move(r));
    }
  };
  const int n_threads = std::min<int>(cfg.workers, static_cast<int>(todo.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<ExperimentRecord> out;
  for (const auto& c : coords) out.push_back(done.at(Key{env, c.variant, c.m, c.n_mult, c.seed}));
  return out;
}

std::vector<std::pair<int, Eigen::Index>> coupled_schedule(double coeff, const std::vector<int>& n_values) {
  if (!(coeff > 0)) throw std::invalid_argument("coupled_schedule: coeff must be > 0");
  std::vector<std::pair<int, Eigen::Index>> out;
  for (int n : n_values) {
    if (n < 2) throw std::invalid_argument("coupled_schedule: n must be >= 2");
    const auto m = static_cast<Eigen::Index>(std::llround(coeff * n * std::log(double(n))));
    out.emplace_back(n, std::max<Eigen::Index>(32, m));
  }
  return out;
}

std::string records_csv_header() {
  return "env,variant,m,n_mult,n,seed,eps_test,kappa_G,kappa_BtB,mean_offdiag_corr,wall_s,status\n";
}

std::string to_csv_row(const ExperimentRecord& r) {
  std::ostringstream os;
  os << std::setprecision(17) << sanitize(r.env) << ',' << sanitize(r.variant) << ',' << r.m << ',' << r.n_mult
     << ',' << r.n << ',' << r.seed << ',' << r.eps_test << ',' << r.kappa_G << ',' << r.kappa_BtB << ','
     << r.mean_offdiag_corr << ',' << r.wall_s << ',' << sanitize(r.status) << '\n';
  return os.str();
}

std::string records_to_csv(const std::vector<ExperimentRecord>& records) {
  std::string s = records_csv_header();
  for (const auto& r : records) s += to_csv_row(r);
  return s;
}

std::vector<ExperimentRecord> records_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line + "\n" != records_csv_header())
    throw FormatError("header", "results CSV header mismatch");
  std::vector<ExperimentRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 12) throw FormatError("line " + std::to_string(line_no), "expected 12 columns");
    try {
      ExperimentRecord r;
      r.env = f[0];
      r.variant = f[1];
      r.m = std::stoll(f[2]);
      r.n_mult = std::stoi(f[3]);
      r.n = std::stoi(f[4]);
      r.seed = std::stoi(f[5]);
      r.eps_test = std::stod(f[6]);
      r.kappa_G = std::stod(f[7]);
      r.kappa_BtB = std::stod(f[8]);
      r.mean_offdiag_corr = std::stod(f[9]);
      r.wall_s = std::stod(f[10]);
      r.status = f[11];
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError("line " + std::to_string(line_no), "unparsable value");
    }
  }
  return out;
}

std::vector<ExperimentRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return records_from_csv(ss.str());
}

ScalingAxis scaling_axis_from_string(const std::string& s) {
  if (s == "m") return ScalingAxis::M;
  if (s == "n") return ScalingAxis::N;
  if (s == "coupled") return ScalingAxis::Coupled;
  throw std::invalid_argument("unknown scaling axis '" + s + "' (expected m, n or coupled)");
}

std::string to_string(ScalingAxis axis) {
  switch (axis) {
    case ScalingAxis::M: return "m";
    case ScalingAxis::N: return "n";
    case ScalingAxis::Coupled: return "coupled";
  }
  return "?";
}

std::map<std::string, PowerLawFit> fit_records(const std::vector<ExperimentRecord>& records, ScalingAxis axis) {
  std::map<std::string, std::vector<PowerLawPoint>> groups;
  std::map<std::string, std::string> family;  // group key -> env|variant|axis
  for (const auto& r : records) {
    if (!r.ok() || !(r.eps_test > 0) || !std::isfinite(r.eps_test)) continue;
    const std::string fam = r.env + "|" + r.variant + "|" + to_string(axis);
    std::string key;
    double D = 0;
    switch (axis) {
      case ScalingAxis::M:
        key = fam + "|n_mult=" + std::to_string(r.n_mult) + "|seed=" + std::to_string(r.seed);
        D = double(r.m);
        break;
      case ScalingAxis::N:
        if (r.m < kMinSamplesForNFit) continue;
        key = fam + "|m=" + std::to_string(r.m) + "|seed=" + std::to_string(r.seed);
        D = double(r.n);
        break;
      case ScalingAxis::Coupled:
        key = fam + "|seed=" + std::to_string(r.seed);
        D = double(r.n);
        break;
    }
    groups[key].push_back({D, r.eps_test});
    family[key] = fam;
  }
  std::map<std::string, PowerLawFit> fits;
  std::map<std::string, std::vector<const PowerLawFit*>> members;
  for (auto& [key, pts] : groups) {
    std::set<double> distinct;
    for (const auto& p : pts) distinct.insert(p.D);
    if (distinct.size() < 3) continue;
    fits.emplace(key, fit_power_law(pts));
  }
  for (const auto& [key, fit] : fits) members[family.at(key)].push_back(&fit);
  for (const auto& [fam, list] : members) {
    PowerLawFit mean;
    for (const PowerLawFit* f : list) {
      mean.A += f->A / double(list.size());
      mean.alpha += f->alpha / double(list.size());
      mean.C += f->C / double(list.size());
      mean.r2 += f->r2 / double(list.size());
      mean.sse += f->sse / double(list.size());
      mean.points.insert(mean.points.end(), f->points.begin(), f->points.end());
    }
    fits.emplace(fam + "|mean", std::move(mean));
  }
  return fits;
}

Json fits_to_json(const std::map<std::string, PowerLawFit>& fits) {
  Json j = Json::object();
  for (const auto& [k, f] : fits) j[k] = to_json(f);
  return j;
}

void export_results(const std::vector<ExperimentRecord>& records, const std::map<std::string, PowerLawFit>& fits,
                    const std::filesystem::path& out_dir) {
  if (records.empty()) throw std::invalid_argument("export_results: no records");
  std::filesystem::create_directories(out_dir);
  auto write = [](const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    if (!out || !(out << s)) throw std::runtime_error("cannot write " + p.string());
  };
  write(out_dir / "records.csv", records_to_csv(records));
  write(out_dir / "fits.json", fits_to_json(fits).dump(2) + "\n");
}

}  // namespace koopman
