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
// Command-line entry point. Every subcommand resolves a JSON config
// (defaults, then --config file, then flags, then --set overrides), prints it,
// and hands the typed configs to the library.

#include "koopman/diagnostics.hpp"
#include "koopman/edmd.hpp"
#include "koopman/mpc.hpp"
#include "koopman/nndm.hpp"
#include "koopman/power_law.hpp"
#include "koopman/scaling_lab.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace koopman;

namespace {

/// Bad input from the user: exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Failure inside a library operation: exit code 2.
struct OpError : std::runtime_error {
  OpError(const std::string& op, const std::string& what) : std::runtime_error(op + ": " + what) {}
};

template <class F>
auto run_op(const std::string& op, F&& f) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw OpError(op, e.what());
  }
}

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  // Shortcuts that map to dotted paths.
  std::optional<std::string> env;
  std::optional<int> n_poly;
  std::optional<long long> m;
  std::optional<int> window;
  std::optional<int> workers;
  std::optional<int> steps;
  std::optional<int> horizon;
  std::string data_path, model_path, points_path, axis = "m", controller = "mpc";
  std::optional<double> coeff;
  std::vector<int> n_values;
  std::string model_kind = "koopman";
};

Json default_config() {
  Json train = to_json(TrainConfig{});
  train.erase("W");
  train.erase("schema");
  return Json{{"schema", 1},
              {"env", {{"name", "damped-pendulum"}}},
              {"data", {{"m", 1000}, {"window", nullptr}, {"seed", 0}}},
              {"model", "koopman"},
              {"train", train},
              {"mpc",
               {{"H", 10},
                {"steps", 500},
                {"fail_threshold", 0.5},
                {"reference", "sinusoid"},
                {"q_weight", 1.0},
                {"r_weight", 0.0},
                {"tol", 1e-8},
                {"max_iter", 5000},
                {"n_samples", 1000},
                {"seed", 0}}},
              {"grid",
               {{"m_values", {1000, 4000, 16000, 64000, 140000}},
                {"n_mult_values", {1, 2, 4, 8, 16}},
                {"seeds", 5},
                {"base_seed", 0},
                {"variants", {"baseline"}},
                {"coupled_coeff", nullptr},
                {"desk_scale", false},
                {"workers", 1}}}};
}

void merge(Json& into, const Json& from, const std::string& path = "") {
  for (const auto& [k, v] : from.items()) {
    const std::string p = path.empty() ? k : path + "." + k;
    if (!into.contains(k)) throw UsageError("unknown config field '" + p + "'");
    if (into[k].is_object() && v.is_object() && k != "env")
      merge(into[k], v, p);
    else
      into[k] = v;
  }
}

void set_dotted(Json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key.path=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json* node = &root;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) throw UsageError("unknown config field '" + path + "'");
    node = &(*node)[parts[i]];
  }
  const bool open_map = node == &root["env"];  // env accepts any EnvSpec field
  if (!node->is_object() || (!node->contains(parts.back()) && !open_map))
    throw UsageError("unknown config field '" + path + "'");
  (*node)[parts.back()] = value;
}

Json resolve(const Options& o) {
  Json cfg = default_config();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw UsageError("cannot read config file " + o.config_path);
    Json file;
    try {
      file = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw UsageError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!file.contains("schema") || file["schema"] != 1) throw UsageError("config file must declare \"schema\": 1");
    merge(cfg, file);
  }
  if (o.env) cfg["env"] = Json{{"name", *o.env}};
  if (o.n_poly) cfg["env"]["n_poly"] = *o.n_poly;
  if (o.m) cfg["data"]["m"] = *o.m;
  if (o.window) cfg["data"]["window"] = *o.window;
  if (o.workers) cfg["grid"]["workers"] = *o.workers;
  if (o.steps) cfg["mpc"]["steps"] = *o.steps;
  if (o.horizon) cfg["mpc"]["H"] = *o.horizon;
  for (const auto& s : o.sets) set_dotted(cfg, s);
  if (o.seed) {
    cfg["data"]["seed"] = *o.seed;
    cfg["train"]["seed"] = *o.seed;
    cfg["grid"]["base_seed"] = *o.seed;
    cfg["mpc"]["seed"] = *o.seed;
  }
  return cfg;
}

EnvSpec env_of(const Json& cfg) {
  const Json& e = cfg.at("env");
  return run_op("envs.by_name", [&] {
    if (e.contains("kind")) return env_from_json(e);
    static const std::set<std::string> known{"name", "n_poly", "b_p"};
    for (const auto& [k, v] : e.items())
      if (!known.count(k)) throw UsageError("unknown env field '" + k + "'");
    const std::string name = e.value("name", std::string("damped-pendulum"));
    if (name == "polynomial") return EnvSpec::polynomial(e.value("n_poly", 3), e.value("b_p", 0.9));
    if (e.contains("n_poly") || e.contains("b_p")) throw UsageError("n_poly and b_p apply to the polynomial env only");
    return EnvSpec::by_name(name);
  });
}

TrainConfig train_of(const Json& cfg) {
  try {
    return train_config_from_json(cfg.at("train"));
  } catch (const std::exception& e) {
    throw UsageError(std::string("train config: ") + e.what());
  }
}

int window_of(const Json& cfg, const TrainConfig& tc) {
  const Json& w = cfg.at("data").at("window");
  return w.is_null() ? tc.T : w.get<int>();
}

void print_resolved(const std::string& cmd, const Json& cfg) {
  Json shown = cfg;
  try {
    shown["env"] = to_json(env_of(cfg));
    shown["train"] = to_json(train_of(cfg));
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
  }
  std::cout << "# koopscale " << cmd << " resolved config\n" << shown.dump(2) << "\n";
  std::cout << "# seed " << cfg["train"]["seed"] << "\n";
}

void write_text(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path().empty() ? fs::path(".") : p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out || !(out << s)) throw std::runtime_error("cannot write " + p.string());
}

Dataset data_of(const Options& o, const Json& cfg, const EnvSpec& env, const TrainConfig& tc) {
  if (!o.data_path.empty()) return run_op("dataset.load_dataset", [&] { return load_dataset(o.data_path); });
  return run_op("dataset.generate_dataset", [&] {
    return generate_dataset(env, cfg["data"]["m"].get<Eigen::Index>(), window_of(cfg, tc),
                            cfg["data"]["seed"].get<std::uint64_t>());
  });
}

std::string format_of(const std::string& bytes) {
  for (const char* f : {"koopman_model", "nndm_model", "edmd_model"}) {
    try {
      (void)decode_blob(bytes, f);
      return f;
    } catch (const FormatError&) {
    }
  }
  throw UsageError("model file is not a koopman_model, nndm_model or edmd_model");
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cmd_gen_data(const Options& o, const Json& cfg) {
  const EnvSpec env = env_of(cfg);
  const TrainConfig tc = train_of(cfg);
  const Dataset d = data_of(o, cfg, env, tc);
  const fs::path path = fs::path(o.out) / "dataset.bin";
  run_op("dataset.save_dataset", [&] { save_dataset(d, path); });
  std::cout << Json{{"dataset", path.string()},
                    {"env", to_string(env.kind)},
                    {"m", d.m()},
                    {"window", d.window},
                    {"train_windows", d.train_index.size()},
                    {"test_windows", d.test_index.size()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_train(const Options& o, const Json& cfg) {
  const EnvSpec env = env_of(cfg);
  const TrainConfig tc = train_of(cfg);
  const Dataset d = data_of(o, cfg, env, tc);
  const std::string kind = cfg["model"].get<std::string>();
  Json report;
  if (kind == "koopman") {
    auto [model, rep] = run_op("koopman_net.train", [&] { return train(d, tc); });
    run_op("koopman_net.save_model", [&] { save_model(model, fs::path(o.out) / "model.bin"); });
    report = {{"model", "koopman"}, {"eps_test", json_number(rep.eps_test)}, {"diverged", rep.diverged},
              {"epochs", rep.epochs.size()}, {"final_loss", rep.epochs.empty() ? 0.0 : rep.epochs.back().total}};
  } else if (kind == "nndm") {
    auto [model, rep] = run_op("nndm.train_nndm", [&] { return train_nndm(d, tc); });
    run_op("nndm.save", [&] { write_text(fs::path(o.out) / "model.bin", serialize_nndm(model)); });
    report = {{"model", "nndm"}, {"eps_test", json_number(rep.eps_test)}, {"diverged", rep.diverged},
              {"epochs", rep.epochs.size()}, {"final_loss", rep.epochs.empty() ? 0.0 : rep.epochs.back().total}};
  } else if (kind == "edmd-identity" || kind == "edmd-poly2") {
    const Dictionary dict = kind == "edmd-identity" ? Dictionary::identity(env.n_x) : Dictionary::polynomial(env.n_x, 2);
    const EdmdModel model = run_op("edmd.edmd_fit", [&] { return edmd_fit(d, dict); });
    run_op("edmd.save", [&] { write_text(fs::path(o.out) / "model.bin", serialize_edmd(model)); });
    report = {{"model", kind}, {"kappa_G", json_number(model.kappa_G)}};
  } else {
    throw UsageError("model must be koopman, nndm, edmd-identity or edmd-poly2");
  }
  write_text(fs::path(o.out) / "report.json", report.dump(2) + "\n");
  std::cout << report.dump() << "\n";
  return report.value("diverged", false) ? 2 : 0;
}

int cmd_eval(const Options& o, const Json& cfg) {
  if (o.model_path.empty() || o.data_path.empty()) throw UsageError("eval needs --model and --data");
  const TrainConfig tc = train_of(cfg);
  const std::string bytes = slurp(o.model_path);
  const Dataset d = run_op("dataset.load_dataset", [&] { return load_dataset(o.data_path); });
  const auto test = usable_windows(d.test(), tc.T);
  const std::string fmt = format_of(bytes);
  double eps = 0;
  if (fmt == "koopman_model") {
    const KoopmanModel m = run_op("koopman_net.load_model", [&] { return deserialize_model(bytes); });
    eps = run_op("koopman_net.prediction_error", [&] { return prediction_error(m, test, tc.T); });
  } else if (fmt == "nndm_model") {
    const NndmModel m = run_op("nndm.deserialize_nndm", [&] { return deserialize_nndm(bytes); });
    eps = run_op("nndm.nndm_prediction_error", [&] { return nndm_prediction_error(m, test, tc.T); });
  } else {
    throw UsageError("eval supports koopman and nndm models");
  }
  const Json out{{"eps_test", json_number(eps)}, {"T", tc.T}, {"test_windows", test.size()}};
  write_text(fs::path(o.out) / "eval.json", out.dump(2) + "\n");
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_mpc(const Options& o, const Json& cfg) {
  if (o.model_path.empty()) throw UsageError("mpc needs --model");
  const EnvSpec env = env_of(cfg);
  const Json& mc = cfg["mpc"];
  const int H = mc["H"].get<int>(), steps = mc["steps"].get<int>();
  const double thr = mc["fail_threshold"].is_null() ? std::numeric_limits<double>::infinity()
                                                    : mc["fail_threshold"].get<double>();
  const std::string ref_kind = mc["reference"].get<std::string>();
  Matrix ref;
  if (ref_kind == "sinusoid")
    ref = run_op("mpc.sinusoid_reference", [&] { return sinusoid_reference(env, steps + H + 1); });
  else if (ref_kind == "zero")
    ref = Matrix::Zero(env.n_x, 1);
  else
    throw UsageError("mpc.reference must be sinusoid or zero");

  const std::string bytes = slurp(o.model_path);
  const std::string fmt = format_of(bytes);
  Controller ctrl;
  if (fmt == "nndm_model") {
    NndmModel m = run_op("nndm.deserialize_nndm", [&] { return deserialize_nndm(bytes); });
    ctrl = make_shooting_controller(std::move(m), H, mc["n_samples"].get<int>(), mc["seed"].get<std::uint64_t>(),
                                    env.control_lo, env.control_hi);
  } else {
    MpcConfig c;
    c.H = H;
    c.Q = mc["q_weight"].get<double>() * Matrix::Identity(env.n_x, env.n_x);
    c.R = mc["r_weight"].get<double>() * Matrix::Identity(env.n_u, env.n_u);
    c.u_min = env.control_lo;
    c.u_max = env.control_hi;
    c.tol = mc["tol"].get<double>();
    c.max_iter = mc["max_iter"].get<int>();
    LinearSurrogate s = fmt == "koopman_model"
                            ? surrogate(run_op("koopman_net.load_model", [&] { return deserialize_model(bytes); }))
                            : surrogate(run_op("edmd.deserialize_edmd", [&] { return deserialize_edmd(bytes); }));
    if (s.n_x() != env.n_x || s.n_u() != env.n_u) throw UsageError("model dimensions do not match the environment");
    ctrl = run_op("mpc.make_mpc_controller", [&] { return make_mpc_controller(std::move(s), c); });
  }
  const Vector x0 = ref.col(0);
  const ClosedLoopResult r =
      run_op("mpc.run_closed_loop", [&] { return run_closed_loop(env, ctrl, x0, ref, steps, H, thr); });
  write_text(fs::path(o.out) / "closed_loop.json", to_json(r).dump() + "\n");
  write_text(fs::path(o.out) / "closed_loop.csv", closed_loop_csv(r));
  std::cout << Json{{"tracking_error", json_number(r.tracking_error)},
                    {"survival_steps", r.survival_steps},
                    {"steps", r.steps},
                    {"truncated", r.truncated},
                    {"max_kkt_residual", json_number(r.kkt.size() ? r.kkt.maxCoeff() : 0.0)}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_diag(const Options& o, const Json& cfg) {
  if (o.model_path.empty()) throw UsageError("diag needs --model");
  const EnvSpec env = env_of(cfg);
  const TrainConfig tc = train_of(cfg);
  const KoopmanModel m = run_op("koopman_net.load_model", [&] { return load_model(o.model_path); });
  const Dataset d = data_of(o, cfg, env, tc);
  const DiagnosticsReport r = run_op("diagnostics.diagnose", [&] { return diagnose(m, d); });
  write_text(fs::path(o.out) / "diagnostics.json", to_json(r).dump(2) + "\n");
  write_text(fs::path(o.out) / "correlation.csv", correlation_csv(r.corr));
  std::cout << to_json(r).dump() << "\n";
  return 0;
}

GridConfig grid_of(const Json& cfg) {
  Json g = cfg["grid"];
  g["env"] = to_json(env_of(cfg));
  g["train"] = cfg["train"];
  try {
    return grid_config_from_json(g);
  } catch (const std::exception& e) {
    throw UsageError(std::string("grid config: ") + e.what());
  }
}

int cmd_grid(const Options& o, const Json& cfg) {
  const GridConfig g = grid_of(cfg);
  const auto records = run_op("scaling_lab.run_grid", [&] { return run_grid(g, o.out); });
  std::size_t failed = 0;
  for (const auto& r : records) failed += !r.ok();
  std::cout << Json{{"records", records.size()}, {"failed", failed},
                    {"results", (fs::path(o.out) / kResultsFile).string()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_fit(const Options& o, const Json&) {
  if (o.points_path.empty()) throw UsageError("fit needs --points");
  ScalingAxis axis;
  try {
    axis = scaling_axis_from_string(o.axis);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto records = run_op("scaling_lab.read_records", [&] { return read_records(o.points_path); });
  const auto fits = run_op("scaling_lab.fit_records", [&] { return fit_records(records, axis); });
  run_op("scaling_lab.export_results", [&] { export_results(records, fits, o.out); });
  std::cout << fits_to_json(fits).dump(2) << "\n";
  return 0;
}

int cmd_schedule(const Options& o, const Json&) {
  if (!o.coeff || o.n_values.empty()) throw UsageError("schedule needs --coeff and --n");
  const auto pairs = run_op("scaling_lab.coupled_schedule", [&] { return coupled_schedule(*o.coeff, o.n_values); });
  Json out = Json::array();
  for (const auto& [n, m] : pairs) out.push_back({{"n", n}, {"m", m}});
  std::cout << out.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Koopman surrogate learning, MPC and scaling experiments"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config_path, "JSON config file (schema 1)")->check(CLI::ExistingFile);
    c->add_option("--set", o.sets, "Override a config field, key.path=value")->take_all();
    c->add_option("--seed", o.seed, "Seed for data, training, grid and controller");
    c->add_option("--out", o.out, "Output directory");
  };
  auto data_flags = [&](CLI::App* c) {
    c->add_option("--env", o.env, "polynomial, damped-pendulum or double-pendulum");
    c->add_option("--n-poly", o.n_poly, "Polynomial nonlinearity order");
    c->add_option("--m", o.m, "Train transitions");
    c->add_option("--window", o.window, "Transitions per window");
    c->add_option("--data", o.data_path, "Existing dataset file")->check(CLI::ExistingFile);
  };

  std::map<CLI::App*, int (*)(const Options&, const Json&)> handlers;
  auto add = [&](const char* name, const char* help, int (*h)(const Options&, const Json&)) {
    CLI::App* c = app.add_subcommand(name, help);
    common(c);
    handlers[c] = h;
    return c;
  };

  auto* gen = add("gen-data", "Generate a dataset", cmd_gen_data);
  data_flags(gen);
  auto* tr = add("train", "Train a model", cmd_train);
  data_flags(tr);
  tr->add_option("--model-kind", o.model_kind, "koopman, nndm, edmd-identity or edmd-poly2");
  auto* ev = add("eval", "Multi-step test error of a model", cmd_eval);
  ev->add_option("--model", o.model_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", o.data_path)->required()->check(CLI::ExistingFile);
  auto* mp = add("mpc", "Closed-loop tracking episode", cmd_mpc);
  mp->add_option("--model", o.model_path)->required()->check(CLI::ExistingFile);
  mp->add_option("--env", o.env);
  mp->add_option("--steps", o.steps);
  mp->add_option("--H", o.horizon, "Horizon");
  auto* dg = add("diag", "Conditioning and correlation diagnostics", cmd_diag);
  data_flags(dg);
  dg->add_option("--model", o.model_path)->required()->check(CLI::ExistingFile);
  auto* gr = add("grid", "Run a scaling grid", cmd_grid);
  gr->add_option("--env", o.env);
  gr->add_option("--n-poly", o.n_poly);
  gr->add_option("--workers", o.workers);
  auto* ft = add("fit", "Fit power laws to grid results", cmd_fit);
  ft->add_option("--points", o.points_path, "results.csv")->required()->check(CLI::ExistingFile);
  ft->add_option("--axis", o.axis, "m, n or coupled");
  auto* sc = add("schedule", "Coupled m = coeff·n·ln n schedule", cmd_schedule);
  sc->add_option("--coeff", o.coeff)->required();
  sc->add_option("--n", o.n_values)->required()->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  CLI::App* cmd = app.get_subcommands().front();
  try {
    Json cfg = resolve(o);
    if (tr->parsed() && tr->count("--model-kind")) cfg["model"] = o.model_kind;
    print_resolved(cmd->get_name(), cfg);
    return handlers.at(cmd)(o, cfg);
  } catch (const UsageError& e) {
    std::cerr << "koopscale " << cmd->get_name() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "koopscale " << cmd->get_name() << ": " << e.what() << "\n";
    return 2;
  }
}
