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
#include "koopman/dataset.hpp"

#include "koopman/rng.hpp"

namespace koopman {

namespace {

constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kTestStream = 2;

Vector sample_box(Rng& rng, const Vector& lo, const Vector& hi) {
  Vector v(lo.size());
  for (Eigen::Index i = 0; i < lo.size(); ++i) v(i) = rng.uniform(lo(i), hi(i));
  return v;
}

// Draws one window; resamples with a fresh sub-stream if the rollout blows up.
Trajectory sample_window(const EnvSpec& env, const SamplingBox& box, Eigen::Index length, std::uint64_t window_seed) {
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    Rng rng(derive_seed(window_seed, static_cast<std::uint64_t>(attempt)));
    const Vector x0 = sample_box(rng, box.state_lo, box.state_hi);
    Matrix controls(env.n_u, length);
    for (Eigen::Index t = 0; t < length; ++t) controls.col(t) = sample_box(rng, box.control_lo, box.control_hi);
    try {
      Trajectory traj = rollout(env, x0, controls);
      if (traj.states.allFinite() && traj.states.cwiseAbs().maxCoeff() < 1e12) return traj;
    } catch (const IntegrationError&) {
    }
  }
  throw std::runtime_error("generate_dataset: window diverged after " + std::to_string(kMaxResamples) + " resamples");
}

}  // namespace

Trajectory rollout(const EnvSpec& env, const Vector& x0, const Matrix& controls) {
  if (x0.size() != env.n_x || controls.rows() != env.n_u)
    throw std::invalid_argument("rollout: state or control dimension mismatch");
  Trajectory traj;
  traj.controls = controls;
  traj.states.resize(env.n_x, controls.cols() + 1);
  traj.states.col(0) = x0;
  for (Eigen::Index t = 0; t < controls.cols(); ++t)
    traj.states.col(t + 1) = env_step(env, traj.states.col(t), controls.col(t));
  return traj;
}

Eigen::Index Dataset::m() const {
  Eigen::Index total = 0;
  for (auto i : train_index) total += windows[i].length();
  return total;
}

std::vector<const Trajectory*> Dataset::train() const {
  std::vector<const Trajectory*> out;
  out.reserve(train_index.size());
  for (auto i : train_index) out.push_back(&windows[i]);
  return out;
}

std::vector<const Trajectory*> Dataset::test() const {
  std::vector<const Trajectory*> out;
  out.reserve(test_index.size());
  for (auto i : test_index) out.push_back(&windows[i]);
  return out;
}

bool Dataset::operator==(const Dataset& o) const {
  return to_json(env) == to_json(o.env) && seed == o.seed && window == o.window && windows == o.windows &&
         train_index == o.train_index && test_index == o.test_index;
}

Dataset generate_dataset(const EnvSpec& env, Eigen::Index m, int window, std::uint64_t seed,
                         const std::optional<SamplingBox>& box_override) {
  env.validate();
  if (window < 1) throw std::invalid_argument("generate_dataset: window must be >= 1");
  if (m < window) throw std::invalid_argument("generate_dataset: m must be >= window length");
  const SamplingBox box = box_override.value_or(SamplingBox{env.state_lo, env.state_hi, env.control_lo, env.control_hi});

  Dataset data;
  data.env = env;
  data.seed = seed;
  data.window = window;

  const std::uint64_t train_seed = derive_seed(seed, kTrainStream);
  const Eigen::Index n_train = (m + window - 1) / window;
  for (Eigen::Index i = 0; i < n_train; ++i) {
    const Eigen::Index length = std::min<Eigen::Index>(window, m - i * window);
    data.train_index.push_back(data.windows.size());
    data.windows.push_back(sample_window(env, box, length, derive_seed(train_seed, static_cast<std::uint64_t>(i))));
  }

  const std::uint64_t test_seed = derive_seed(seed, kTestStream);
  const Eigen::Index n_test = (kTestTransitions + window - 1) / window;
  for (Eigen::Index i = 0; i < n_test; ++i) {
    data.test_index.push_back(data.windows.size());
    data.windows.push_back(sample_window(env, box, window, derive_seed(test_seed, static_cast<std::uint64_t>(i))));
  }
  return data;
}

std::string serialize_dataset(const Dataset& data) {
  Eigen::Index n_states = 0, n_controls = 0;
  std::vector<Eigen::Index> lengths;
  for (const auto& w : data.windows) {
    lengths.push_back(w.length());
    n_states += w.states.cols();
    n_controls += w.controls.cols();
  }
  // Row-major blocks of one state (control) per row.
  Matrix states(n_states, data.env.n_x), controls(n_controls, data.env.n_u);
  Eigen::Index rs = 0, rc = 0;
  for (const auto& w : data.windows) {
    states.middleRows(rs, w.states.cols()) = w.states.transpose();
    controls.middleRows(rc, w.controls.cols()) = w.controls.transpose();
    rs += w.states.cols();
    rc += w.controls.cols();
  }
  Json header{{"env", to_json(data.env)},
              {"seed", data.seed},
              {"window", data.window},
              {"m", data.m()},
              {"window_lengths", lengths},
              {"train_index", data.train_index},
              {"test_index", data.test_index},
              {"n_train_windows", data.train_index.size()},
              {"n_test_windows", data.test_index.size()}};
  return encode_blob("dataset", std::move(header), {{"states", states}, {"controls", controls}});
}

Dataset deserialize_dataset(const std::string& bytes) {
  const BlobFile file = decode_blob(bytes, "dataset");
  Dataset data;
  data.env = env_from_json(header_field<Json>(file.header, "env"));
  data.seed = header_field<std::uint64_t>(file.header, "seed");
  data.window = header_field<int>(file.header, "window");
  const auto lengths = header_field<std::vector<Eigen::Index>>(file.header, "window_lengths");
  data.train_index = header_field<std::vector<std::size_t>>(file.header, "train_index");
  data.test_index = header_field<std::vector<std::size_t>>(file.header, "test_index");

  Eigen::Index n_states = 0, n_controls = 0;
  for (auto len : lengths) {
    if (len < 0) throw FormatError("window_lengths", "negative window length");
    n_states += len + 1;
    n_controls += len;
  }
  const Matrix& states = file.block("states", n_states, data.env.n_x);
  const Matrix& controls = file.block("controls", n_controls, data.env.n_u);
  Eigen::Index rs = 0, rc = 0;
  for (auto len : lengths) {
    data.windows.push_back({states.middleRows(rs, len + 1).transpose(), controls.middleRows(rc, len).transpose()});
    rs += len + 1;
    rc += len;
  }
  for (auto idx : data.train_index)
    if (idx >= data.windows.size()) throw FormatError("train_index", "index out of range");
  for (auto idx : data.test_index)
    if (idx >= data.windows.size()) throw FormatError("test_index", "index out of range");
  if (header_field<Eigen::Index>(file.header, "m") != data.m()) throw FormatError("m", "does not match train windows");
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) { write_file(path, serialize_dataset(data)); }

Dataset load_dataset(const std::filesystem::path& path) { return deserialize_dataset(read_file(path)); }

}  // namespace koopman
