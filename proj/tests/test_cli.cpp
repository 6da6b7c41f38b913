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
// Runs the koopscale binary and compares its artifacts with direct library calls.

#include "koopman/koopman_net.hpp"
#include "koopman/scaling_lab.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

using namespace koopman;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(KOOPSCALE_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("koopscale_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("gen-data and train match the library byte for byte") {
  const fs::path dir = scratch("artifacts");
  REQUIRE(run_cli("gen-data --env damped-pendulum --m 120 --seed 3 --out " + (dir / "data").string()) == 0);
  const Dataset d = generate_dataset(EnvSpec::damped_pendulum(), 120, 5, 3);
  CHECK(read_file(dir / "data" / "dataset.bin") == serialize_dataset(d));

  const std::string overrides = " --set train.hidden=8 --set train.epochs=2 --set train.batch_size=8 --set train.n_mult=1";
  REQUIRE(run_cli("train --seed 3 --data " + (dir / "data" / "dataset.bin").string() + overrides + " --out " +
                  (dir / "model").string()) == 0);
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.n_mult = 1;
  cfg.seed = 3;
  const auto [model, report] = train(d, cfg);
  CHECK(read_file(dir / "model" / "model.bin") == serialize_model(model));
  CHECK(fs::exists(dir / "model" / "report.json"));

  REQUIRE(run_cli("diag --model " + (dir / "model" / "model.bin").string() + " --data " +
                  (dir / "data" / "dataset.bin").string() + " --out " + (dir / "diag").string()) == 0);
  CHECK(fs::exists(dir / "diag" / "diagnostics.json"));
  CHECK(fs::exists(dir / "diag" / "correlation.csv"));
  fs::remove_all(dir);
}

TEST_CASE("fit reads records and writes fits") {
  const fs::path dir = scratch("fit");
  std::vector<ExperimentRecord> recs;
  for (Eigen::Index m : {1000, 4000, 16000, 64000}) {
    ExperimentRecord r;
    r.env = "damped-pendulum";
    r.variant = "baseline";
    r.m = m;
    r.n_mult = 4;
    r.n = 10;
    r.eps_test = 0.2 / double(m) + 1e-5;
    r.status = "ok";
    recs.push_back(r);
  }
  write_file(dir / "results.csv", records_to_csv(recs));
  REQUIRE(run_cli("fit --points " + (dir / "results.csv").string() + " --out " + (dir / "out").string()) == 0);
  const Json fits = Json::parse(read_file(dir / "out" / "fits.json"));
  CHECK(fits.contains("damped-pendulum|baseline|m|n_mult=4|seed=0"));
  fs::remove_all(dir);
}

TEST_CASE("exit codes") {
  CHECK(run_cli("") == 1);
  CHECK(run_cli("no-such-command") == 1);
  CHECK(run_cli("gen-data --env no-such-env --out /tmp/koopscale_cli_never") == 2);
  CHECK(run_cli("schedule --coeff 40 --n 10") == 0);
  CHECK(run_cli("gen-data --set data.nothing=1 --out /tmp/koopscale_cli_never") != 0);
}
