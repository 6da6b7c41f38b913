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
#include "koopman/koopman_net.hpp"
#include "support.hpp"

#include <doctest.h>

#include <filesystem>

using namespace koopman;
using namespace koopman::testing;

namespace {

// Scalar model with Ψ ≡ 0 and hand-set latent dynamics.
KoopmanModel hand_model(const Matrix& A, const Matrix& B) {
  KoopmanModel m = init_model(1, static_cast<int>(B.cols()), 1, 3, 8);
  m.W3().setZero();
  m.A() = A;
  m.B() = B;
  return m;
}

// Train/test windows from x⁺ = A x + B u on a two-dimensional state.
Dataset linear_dataset(int n_windows, int T, std::uint64_t seed) {
  const Matrix A = (Matrix(2, 2) << 0.9, 0.2, -0.1, 0.8).finished();
  const Matrix B = (Matrix(2, 1) << 0.5, -0.3).finished();
  Rng rng(seed);
  Dataset d;
  d.env = EnvSpec::damped_pendulum();
  d.window = T;
  for (int i = 0; i < n_windows + 8; ++i) {
    Trajectory w{Matrix(2, T + 1), gaussian(rng, 1, T, 0.5)};
    w.states.col(0) = gaussian(rng, 2, 1, 0.5);
    for (int t = 0; t < T; ++t) w.states.col(t + 1) = A * w.states.col(t) + B * w.controls.col(t);
    (i < n_windows ? d.train_index : d.test_index).push_back(d.windows.size());
    d.windows.push_back(std::move(w));
  }
  return d;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.hidden = 16;
  cfg.n_mult = 1;
  cfg.batch_size = 16;
  cfg.epochs = 3;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("init_model: orthogonal scaled A, orthonormal W3, determinism") {
  const KoopmanModel m = init_model(2, 1, 4, 7);
  CHECK(m.n() == 10);
  CHECK(m.params().size() == m.layout().size());
  const auto sA = svd(Matrix(m.A())).S;
  for (Eigen::Index i = 0; i < sA.size(); ++i) CHECK(std::abs(sA(i) - 0.99) < 1e-9);
  const auto sW = svd(Matrix(m.W3())).S;
  for (Eigen::Index i = 0; i < sW.size(); ++i) CHECK(std::abs(sW(i) - 1.0) < 1e-9);
  CHECK(init_model(2, 1, 4, 7).params() == m.params());
  CHECK(init_model(2, 1, 4, 8).params() != m.params());
  CHECK(m.P() == (Matrix(2, 10) << Matrix::Identity(2, 2), Matrix::Zero(2, 8)).finished());
}

TEST_CASE("encode keeps the state and matches its finite-difference Jacobian") {
  const KoopmanModel m = random_model(3, 1, 2, 32, 5);
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    const Vector x = gaussian(rng, 3, 1, 3.0);
    CHECK(m.P() * encode(m, x) == x);
  }
  KoopmanModel zero = m;
  zero.W3().setZero();
  const Vector x = gaussian(rng, 3, 1);
  CHECK(encode(zero, x) == (Vector(9) << x, Vector::Zero(6)).finished());

  // Row-by-row Jacobian through encode_backward against central differences.
  EncoderCache cache;
  const Matrix Z = encode(m, Matrix(x), &cache);
  double worst_rel = 0;
  for (int r = 0; r < m.n(); ++r) {
    Matrix dZ = Matrix::Zero(m.n(), 1);
    dZ(r) = 1;
    Vector grad = Vector::Zero(m.params().size());
    const Vector row = encode_backward(m, cache, dZ, grad);
    const Vector fd = finite_diff_grad([&](const Vector& v) { return encode(m, v)(r); }, x, 1e-6);
    worst_rel = std::max(worst_rel, (row - fd).cwiseAbs().maxCoeff() / std::max(fd.cwiseAbs().maxCoeff(), 1e-7));
  }
  CHECK(worst_rel < 1e-5);
  CHECK(Z.col(0) == encode(m, x));
}

TEST_CASE("rollout_latent examples") {
  KoopmanModel id = hand_model(Matrix::Identity(2, 2), Matrix::Zero(2, 1));
  const LatentRollout r0 = rollout_latent(id, Vector::Constant(1, 1.7), Matrix::Ones(1, 4));
  CHECK(r0.x == Matrix::Constant(1, 4, 1.7));

  const KoopmanModel hm = hand_model((Matrix(2, 2) << 0.5, 0, 0, 0.5).finished(), (Matrix(2, 1) << 1, 0).finished());
  const LatentRollout r = rollout_latent(hm, Vector::Constant(1, 2.0), Matrix::Ones(1, 2));
  CHECK(r.x(0, 0) == 2.0);
  CHECK(r.x(0, 1) == 2.0);
  CHECK_FALSE(r.blew_up);

  const KoopmanModel m = random_model(2, 1, 2, 16, 9);
  Rng rng(1);
  const Vector x = gaussian(rng, 2, 1);
  const Matrix u = gaussian(rng, 1, 1);
  CHECK((rollout_latent(m, x, u).z.col(0) - (m.A() * encode(m, x) + m.B() * u)).norm() < 1e-14);

  const KoopmanModel big = hand_model(Matrix::Identity(2, 2) * 1e4, Matrix::Zero(2, 1));
  CHECK(rollout_latent(big, Vector::Ones(1), Matrix::Zero(1, 5)).blew_up);
}

TEST_CASE("loss_pred examples and normalization") {
  TrainConfig cfg;
  cfg.T = 2;
  cfg.beta = 0.5;
  CHECK(cfg.W() == 0.75);
  // A = B = 0 predicts x̂ = 0, so the errors are the targets themselves.
  const KoopmanModel zero = hand_model(Matrix::Zero(2, 2), Matrix::Zero(2, 1));
  const Trajectory w{(Matrix(1, 3) << 5, 1, 2).finished(), Matrix::Zero(1, 2)};
  CHECK(loss_pred(zero, w, cfg) == doctest::Approx(2.0).epsilon(1e-15));

  cfg.T = 1;
  for (double beta : {0.3, 0.9, 1.0}) {
    cfg.beta = beta;
    CHECK(loss_pred(zero, w, cfg) == doctest::Approx(1.0).epsilon(1e-15));
  }

  // Exact model on linear data.
  const KoopmanModel exact = hand_model((Matrix(2, 2) << 0.5, 0, 0, 0).finished(), (Matrix(2, 1) << 1, 0).finished());
  const Trajectory lin{(Matrix(1, 4) << 2, 2, 1.5, 0.75).finished(), (Matrix(1, 3) << 1, 0.5, 0).finished()};
  cfg.T = 3;
  CHECK(loss_pred(exact, lin, cfg) == 0.0);

  // Rescaling every weight and W by the same factor leaves the value unchanged.
  const KoopmanModel m = random_model(2, 1, 1, 8, 2);
  Rng rng(3);
  const auto ws = random_windows(rng, 2, 1, 4, 1);
  cfg.T = 4;
  cfg.beta = 0.7;
  double num = 0;
  const LatentRollout r = rollout_latent(m, ws[0].states.col(0), ws[0].controls);
  for (int k = 1; k <= 4; ++k) num += 3.0 * std::pow(0.7, k) * (r.x.col(k - 1) - ws[0].states.col(k)).squaredNorm();
  CHECK(loss_pred(m, ws[0], cfg) == doctest::Approx(num / (3.0 * cfg.W())).epsilon(1e-12));
  CHECK(loss_pred(m, ws[0], cfg) >= 0);
}

TEST_CASE("loss_cov examples") {
  CHECK(loss_cov((Matrix(2, 2) << 0, 1, 0, 1).finished()) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(loss_cov((Matrix(2, 4) << 1, -1, 1, -1, 1, 1, -1, -1).finished()) == 0.0);
  Rng rng(4);
  Matrix Z = gaussian(rng, 4, 10);
  const double v = loss_cov(Z);
  CHECK(v > 0);
  Matrix P = Z;
  P.col(0).swap(P.col(7));
  P.col(3).swap(P.col(5));
  CHECK(loss_cov(P) == doctest::Approx(v).epsilon(1e-14));
  CHECK_THROWS(loss_cov(Matrix::Ones(3, 1)));
}

TEST_CASE("loss_ctrl examples") {
  TrainConfig cfg;
  cfg.T = 1;
  cfg.beta = 1.0;
  cfg.ridge_ctrl = 0;
  // Ψ ≡ 0, A = 0, B = [1; 0]: û = x⁺ regardless of the latent tail.
  const KoopmanModel m = hand_model(Matrix::Zero(2, 2), (Matrix(2, 1) << 1, 0).finished());
  const Trajectory w{(Matrix(1, 2) << 0.4, 3.0).finished(), Matrix::Zero(1, 1)};
  CHECK(loss_ctrl(m, w, cfg) == doctest::Approx(9.0).epsilon(1e-14));
  const Trajectory w3{(Matrix(1, 2) << 0.4, 3.0).finished(), Matrix::Constant(1, 1, 3.0)};
  CHECK(loss_ctrl(m, w3, cfg) == doctest::Approx(0.0));

  // Scaling B by c scales û by c/(c² + ε_B).
  cfg.ridge_ctrl = 0.25;
  for (double c : {0.5, 2.0, 7.0}) {
    const KoopmanModel mc = hand_model(Matrix::Zero(2, 2), (Matrix(2, 1) << c, 0).finished());
    const double uhat = c / (c * c + 0.25) * 3.0;
    CHECK(loss_ctrl(mc, w, cfg) == doctest::Approx(uhat * uhat).epsilon(1e-13));
  }

  // Data consistent with (A, B) and B of full column rank.
  const KoopmanModel lin_m = hand_model((Matrix(2, 2) << 0.7, 0, 0, 0).finished(), (Matrix(2, 1) << 1.5, 0).finished());
  Trajectory lin{Matrix(1, 4), (Matrix(1, 3) << 0.3, -1.0, 2.0).finished()};
  lin.states(0, 0) = 0.4;
  for (int t = 0; t < 3; ++t) lin.states(0, t + 1) = 0.7 * lin.states(0, t) + 1.5 * lin.controls(0, t);
  cfg.T = 3;
  cfg.ridge_ctrl = 1e-14;
  CHECK(loss_ctrl(lin_m, lin, cfg) < 1e-20);
}

TEST_CASE("composite gradients match central differences on every block") {
  Rng rng(7);
  SUBCASE("two-state toy") {
    const KoopmanModel m = random_model(1, 1, 1, 16, 21);
    const auto ws = random_windows(rng, 1, 1, 2, 4);
    TrainConfig cfg;
    cfg.T = 2;
    for (LossTerm term : {LossTerm::Pred, LossTerm::Cov, LossTerm::Ctrl, LossTerm::Total})
      CHECK(worst(gradient_deviation(m, pointers(ws), cfg, term, 1000, 1)) < 1e-4);
  }
  SUBCASE("pendulum-sized model") {
    const KoopmanModel m = random_model(2, 1, 2, 32, 22);
    const auto ws = random_windows(rng, 2, 1, 5, 6);
    TrainConfig cfg;
    CHECK(worst(gradient_deviation(m, pointers(ws), cfg, LossTerm::Total, 60, 2)) < 1e-4);
  }
}

TEST_CASE("composite loss structure") {
  Rng rng(8);
  const KoopmanModel m = random_model(2, 1, 2, 16, 23);
  const auto ws = random_windows(rng, 2, 1, 5, 5);
  const auto batch = pointers(ws);
  TrainConfig cfg;
  cfg.w_cov = 0;
  cfg.w_ctrl = 0;
  const LossAndGrad lg = total_loss_and_grads(m, batch, cfg);
  double pred = 0;
  for (const auto* w : batch) pred += loss_pred(m, *w, cfg);
  CHECK(lg.loss.total == doctest::Approx(pred / 5).epsilon(1e-13));

  // Mean over windows: a duplicated batch has the same gradient.
  std::vector<const Trajectory*> twice = batch;
  twice.insert(twice.end(), batch.begin(), batch.end());
  const LossAndGrad lg2 = total_loss_and_grads(m, twice, cfg);
  CHECK((lg2.grad - lg.grad).cwiseAbs().maxCoeff() <= 1e-12 * lg.grad.cwiseAbs().maxCoeff());

  cfg.w_cov = 1;
  cfg.w_ctrl = 0.1;
  const LossAndGrad full = total_loss_and_grads(m, batch, cfg);
  CHECK(full.loss.total == doctest::Approx(full.loss.pred + full.loss.cov + 0.1 * full.loss.ctrl));
  CHECK(full.loss.total == doctest::Approx(total_loss(m, batch, cfg).total).epsilon(1e-13));

  std::vector<Trajectory> bad = ws;
  bad[3].states(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    (void)total_loss_and_grads(m, pointers(bad), cfg);
    FAIL("expected NonFiniteLossError");
  } catch (const NonFiniteLossError& e) {
    CHECK(e.window() == 3);
  }
}

TEST_CASE("training: epochs = 0, determinism, step budget") {
  const Dataset d = linear_dataset(40, 5, 1);
  TrainConfig cfg = small_config();
  cfg.epochs = 0;
  const auto [m0, r0] = train(d, cfg);
  CHECK(m0.params() == init_model(2, 1, 1, derive_seed(cfg.seed, 11), 16).params());
  CHECK(r0.epochs.empty());
  CHECK(r0.eps_test == doctest::Approx(prediction_error(m0, d.test(), cfg.T)));

  cfg.epochs = 3;
  const auto [a, ra] = train(d, cfg);
  const auto [b, rb] = train(d, cfg);
  CHECK(a.params() == b.params());
  CHECK(ra.eps_test == rb.eps_test);
  REQUIRE(ra.epochs.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) CHECK(ra.epochs[e].total == rb.epochs[e].total);

  CHECK(batches_per_epoch(40, 16) == 3);
  CHECK(batches_per_epoch(33, 16) == 2);  // trailing singleton merges
  CHECK(batches_per_epoch(5, 16) == 1);
  cfg.min_steps = 10;
  CHECK(effective_epochs(cfg, 40) == 4);
  cfg.min_steps = 0;
  CHECK(effective_epochs(cfg, 40) == 3);
}

TEST_CASE("training fits exactly lifted linear data") {
  const Dataset d = linear_dataset(256, 5, 2);
  TrainConfig cfg = small_config();
  cfg.w_cov = 0;
  cfg.w_ctrl = 0;
  cfg.batch_size = 32;
  cfg.epochs = 1500;
  const auto [m, r] = train(d, cfg);
  CHECK_FALSE(r.diverged);
  CHECK(r.epochs.back().pred < 1e-6);
  CHECK(r.eps_test < 1e-5);
}

TEST_CASE("model serialization") {
  const KoopmanModel m = random_model(2, 1, 3, 16, 4);
  const std::string bytes = serialize_model(m);
  const KoopmanModel back = deserialize_model(bytes);
  CHECK(serialize_model(back) == bytes);
  Rng rng(1);
  const Vector x = gaussian(rng, 2, 1);
  CHECK(encode(back, x) == encode(m, x));

  const auto dir = std::filesystem::temp_directory_path() / "koopscale_model_test";
  std::filesystem::create_directories(dir);
  save_model(m, dir / "m.bin");
  CHECK(load_model(dir / "m.bin").params() == m.params());
  std::filesystem::remove_all(dir);

  std::string corrupt = bytes;
  const auto pos = corrupt.find("\"n_mult\"");
  REQUIRE(pos != std::string::npos);
  corrupt.replace(pos, 8, "\"n_mulx\"");
  try {
    (void)deserialize_model(corrupt);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("n_mult") != std::string::npos);
  }
}

TEST_CASE("TrainConfig JSON") {
  TrainConfig cfg;
  cfg.beta = 0.8;
  cfg.min_steps = 123;
  const TrainConfig back = train_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  CHECK_THROWS(train_config_from_json(Json{{"bogus", 1}}));
  cfg.T = 0;
  CHECK_THROWS(cfg.validate());
}
