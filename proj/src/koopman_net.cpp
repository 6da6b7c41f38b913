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

#include "koopman/adam.hpp"
#include "koopman/rng.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

namespace koopman {

namespace {

constexpr std::uint64_t kInitStream = 11;
constexpr std::uint64_t kShuffleStream = 12;
constexpr double kLossClip = 1e10;

Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

void fill_uniform(Rng& rng, double* data, Eigen::Index count, double bound) {
  for (Eigen::Index i = 0; i < count; ++i) data[i] = rng.uniform(-bound, bound);
}

// Per-step state and control blocks of a batch: X[k] is n_x × b, U[k] is n_u × b.
struct BatchSteps {
  std::vector<Matrix> X;
  std::vector<Matrix> U;
};

BatchSteps gather(std::span<const Trajectory* const> batch, int T, int n_x, int n_u) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  BatchSteps s;
  s.X.assign(static_cast<std::size_t>(T + 1), Matrix(n_x, b));
  s.U.assign(static_cast<std::size_t>(T), Matrix(n_u, b));
  for (Eigen::Index j = 0; j < b; ++j) {
    const Trajectory& w = *batch[static_cast<std::size_t>(j)];
    if (w.length() < T) throw std::invalid_argument("window shorter than the training horizon");
    if (w.states.rows() != n_x || w.controls.rows() != n_u) throw std::invalid_argument("window dimension mismatch");
    for (int k = 0; k <= T; ++k) s.X[static_cast<std::size_t>(k)].col(j) = w.states.col(k);
    for (int k = 0; k < T; ++k) s.U[static_cast<std::size_t>(k)].col(j) = w.controls.col(k);
  }
  return s;
}

Matrix hstack(const std::vector<Matrix>& blocks) {
  Eigen::Index cols = 0;
  for (const auto& m : blocks) cols += m.cols();
  Matrix out(blocks.front().rows(), cols);
  Eigen::Index c = 0;
  for (const auto& m : blocks) {
    out.middleCols(c, m.cols()) = m;
    c += m.cols();
  }
  return out;
}

std::size_t first_bad_column(const Matrix& M) {
  for (Eigen::Index j = 0; j < M.cols(); ++j)
    if (!M.col(j).allFinite()) return static_cast<std::size_t>(j);
  return 0;
}

}  // namespace

std::vector<ParamLayout::Block> ParamLayout::blocks() const {
  return {{"W1", w1(), hidden, n_x}, {"b1", b1(), hidden, 1}, {"W2", w2(), hidden, hidden},
          {"b2", b2(), hidden, 1},   {"W3", w3(), n_enc(), hidden}, {"A", a(), n(), n()},
          {"B", b(), n(), n_u}};
}

Matrix KoopmanModel::P() const {
  Matrix p = Matrix::Zero(n_x(), n());
  p.leftCols(n_x()).setIdentity();
  return p;
}

KoopmanModel init_model(int n_x, int n_u, int n_mult, std::uint64_t seed, int hidden) {
  if (n_x < 1 || n_u < 0 || n_mult < 1 || hidden < 1)
    throw std::invalid_argument("init_model: need n_x >= 1, n_u >= 0, n_mult >= 1, hidden >= 1");
  KoopmanModel model(ParamLayout{n_x, n_u, n_mult, hidden});
  Rng rng(seed);

  fill_uniform(rng, model.W1().data(), model.W1().size(), 1.0 / std::sqrt(double(n_x)));
  fill_uniform(rng, model.b1().data(), model.b1().size(), 1.0 / std::sqrt(double(n_x)));
  fill_uniform(rng, model.W2().data(), model.W2().size(), 1.0 / std::sqrt(double(hidden)));
  fill_uniform(rng, model.b2().data(), model.b2().size(), 1.0 / std::sqrt(double(hidden)));

  const Svd<double> w3 = svd(gaussian(rng, model.n_enc(), hidden));
  model.W3() = w3.U * w3.Vt;

  const Svd<double> a = svd(gaussian(rng, model.n(), model.n()));
  model.A() = 0.99 * a.U * a.Vt;

  model.B() = 0.01 * gaussian(rng, model.n(), n_u);
  return model;
}

Matrix encode(const KoopmanModel& model, const Matrix& X, EncoderCache* cache) {
  if (X.rows() != model.n_x()) throw std::invalid_argument("encode: state dimension mismatch");
  Matrix H1 = ((model.W1() * X).colwise() + model.b1()).cwiseMax(0.0);
  Matrix R2 = ((model.W2() * H1).colwise() + model.b2()).cwiseMax(0.0);
  Matrix H2 = H1 + R2;
  Matrix Z(model.n(), X.cols());
  Z.topRows(model.n_x()) = X;
  Z.bottomRows(model.n_enc()).noalias() = model.W3() * H2;
  if (cache) {
    cache->X = X;
    cache->H1 = std::move(H1);
    cache->R2 = std::move(R2);
    cache->H2 = std::move(H2);
  }
  return Z;
}

Vector encode(const KoopmanModel& model, const Vector& x) { return encode(model, Matrix(x), nullptr).col(0); }

Matrix encode_backward(const KoopmanModel& model, const EncoderCache& cache, const Matrix& dZ, Vector& grad) {
  const ParamLayout& L = model.layout();
  MatrixMap gW1(grad.data() + L.w1(), L.hidden, L.n_x);
  VectorMap gb1(grad.data() + L.b1(), L.hidden);
  MatrixMap gW2(grad.data() + L.w2(), L.hidden, L.hidden);
  VectorMap gb2(grad.data() + L.b2(), L.hidden);
  MatrixMap gW3(grad.data() + L.w3(), L.n_enc(), L.hidden);

  const auto dPsi = dZ.bottomRows(model.n_enc());
  gW3.noalias() += dPsi * cache.H2.transpose();
  Matrix dH2 = model.W3().transpose() * dPsi;
  Matrix dP2 = (cache.R2.array() > 0.0).select(dH2, 0.0);
  gW2.noalias() += dP2 * cache.H1.transpose();
  gb2 += dP2.rowwise().sum();
  Matrix dH1 = dH2;
  dH1.noalias() += model.W2().transpose() * dP2;
  Matrix dP1 = (cache.H1.array() > 0.0).select(dH1, 0.0);
  gW1.noalias() += dP1 * cache.X.transpose();
  gb1 += dP1.rowwise().sum();

  Matrix dX = dZ.topRows(model.n_x());
  dX.noalias() += model.W1().transpose() * dP1;
  return dX;
}

LatentRollout rollout_latent(const KoopmanModel& model, const Vector& x0, const Matrix& controls) {
  const Eigen::Index T = controls.cols();
  if (T < 1) throw std::invalid_argument("rollout_latent: horizon must be >= 1");
  if (controls.rows() != model.n_u()) throw std::invalid_argument("rollout_latent: control dimension mismatch");
  LatentRollout out;
  out.z.resize(model.n(), T);
  Vector z = encode(model, x0);
  for (Eigen::Index k = 0; k < T; ++k) {
    z = model.A() * z + model.B() * controls.col(k);
    out.z.col(k) = z;
    if (!z.allFinite() || z.norm() > kBlowUpNorm) out.blew_up = true;
  }
  out.x = out.z.topRows(model.n_x());
  return out;
}

double TrainConfig::W() const {
  double w = 0, p = 1;
  for (int j = 1; j <= T; ++j) {
    p *= beta;
    w += p;
  }
  return w;
}

void TrainConfig::validate() const {
  const auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("TrainConfig: ") + what);
  };
  require(T >= 1, "T must be >= 1");
  require(beta > 0 && beta <= 1, "beta must lie in (0, 1]");
  require(w_cov >= 0 && w_ctrl >= 0, "loss weights must be non-negative");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(epochs >= 0, "epochs must be >= 0");
  require(min_steps >= 0, "min_steps must be >= 0");
  require(learning_rate > 0, "learning_rate must be positive");
  require(lr_decay > 0 && lr_decay_at >= 0 && lr_decay_at <= 1, "learning-rate decay out of range");
  require(ridge_ctrl >= 0, "ridge_ctrl must be non-negative");
  require(n_mult >= 1, "n_mult must be >= 1");
  require(hidden >= 1, "hidden must be >= 1");
}

Json to_json(const TrainConfig& c) {
  return Json{{"schema", 1},          {"T", c.T},
              {"beta", c.beta},       {"W", c.W()},
              {"w_cov", c.w_cov},     {"w_ctrl", c.w_ctrl},
              {"batch_size", c.batch_size}, {"epochs", c.epochs}, {"min_steps", c.min_steps},
              {"learning_rate", c.learning_rate}, {"lr_decay", c.lr_decay},
              {"lr_decay_at", c.lr_decay_at}, {"ridge_ctrl", c.ridge_ctrl},
              {"n_mult", c.n_mult},   {"hidden", c.hidden},
              {"seed", c.seed}};
}

TrainConfig train_config_from_json(const Json& j) {
  if (!j.is_object()) throw FormatError("train", "config must be a JSON object");
  static const std::set<std::string> known{"schema", "T", "beta", "W", "w_cov", "w_ctrl", "batch_size", "epochs",
                                           "min_steps",
                                           "learning_rate", "lr_decay", "lr_decay_at", "ridge_ctrl", "n_mult",
                                           "hidden", "seed"};
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw FormatError(key, "unknown TrainConfig field");
  TrainConfig c;
  const auto get = [&](const char* name, auto& field) {
    if (j.contains(name)) field = header_field<std::decay_t<decltype(field)>>(j, name);
  };
  if (j.contains("schema") && header_field<int>(j, "schema") != 1) throw FormatError("schema", "unsupported schema");
  get("T", c.T);
  get("beta", c.beta);
  get("w_cov", c.w_cov);
  get("w_ctrl", c.w_ctrl);
  get("batch_size", c.batch_size);
  get("epochs", c.epochs);
  get("min_steps", c.min_steps);
  get("learning_rate", c.learning_rate);
  get("lr_decay", c.lr_decay);
  get("lr_decay_at", c.lr_decay_at);
  get("ridge_ctrl", c.ridge_ctrl);
  get("n_mult", c.n_mult);
  get("hidden", c.hidden);
  get("seed", c.seed);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError("train", e.what());
  }
  if (j.contains("W") && std::abs(header_field<double>(j, "W") - c.W()) > 1e-12 * std::max(1.0, c.W()))
    throw FormatError("W", "does not match sum of beta^j for j = 1..T");
  return c;
}

double loss_pred(const KoopmanModel& model, const Trajectory& window, const TrainConfig& cfg) {
  if (window.length() < cfg.T) throw std::invalid_argument("loss_pred: window shorter than T");
  const LatentRollout r = rollout_latent(model, window.states.col(0), window.controls.leftCols(cfg.T));
  double acc = 0, weight = 1;
  for (int k = 1; k <= cfg.T; ++k) {
    weight *= cfg.beta;
    acc += weight * (r.x.col(k - 1) - window.states.col(k)).squaredNorm();
  }
  return acc / cfg.W();
}

double loss_cov(const Matrix& Z) {
  const Eigen::Index n = Z.rows(), b = Z.cols();
  if (b < 2) throw std::invalid_argument("loss_cov: need at least 2 samples");
  if (n < 2) return 0.0;
  const Matrix Zc = Z.colwise() - Z.rowwise().mean();
  Matrix G = Zc * Zc.transpose() / double(b - 1);
  G.diagonal().setZero();
  return G.squaredNorm() / double(n * (n - 1));
}

double loss_ctrl(const KoopmanModel& model, const Trajectory& window, const TrainConfig& cfg) {
  if (model.n_u() < 1) throw std::invalid_argument("loss_ctrl: model has no control input");
  if (window.length() < cfg.T) throw std::invalid_argument("loss_ctrl: window shorter than T");
  const Matrix Z = encode(model, Matrix(window.states.leftCols(cfg.T + 1)));
  Matrix S = model.B().transpose() * model.B();
  S.diagonal().array() += cfg.ridge_ctrl;
  const Matrix Mp = S.ldlt().solve(Matrix(model.B().transpose()));
  double acc = 0, weight = 1;
  for (int k = 0; k < cfg.T; ++k) {
    const Vector u_hat = Mp * (Z.col(k + 1) - model.A() * Z.col(k));
    acc += weight * (u_hat - window.controls.col(k)).squaredNorm();
    weight *= cfg.beta;
  }
  return acc / cfg.W();
}

LossTerms total_loss(const KoopmanModel& model, std::span<const Trajectory* const> batch, const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  LossTerms t;
  Matrix starts(model.n_x(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    t.pred += loss_pred(model, *batch[i], cfg);
    if (cfg.w_ctrl > 0 && model.n_u() > 0) t.ctrl += loss_ctrl(model, *batch[i], cfg);
    starts.col(static_cast<Eigen::Index>(i)) = batch[i]->states.col(0);
  }
  t.pred /= double(batch.size());
  t.ctrl /= double(batch.size());
  if (batch.size() >= 2) t.cov = loss_cov(encode(model, starts));
  t.total = t.pred + cfg.w_cov * t.cov + cfg.w_ctrl * t.ctrl;
  return t;
}

LossAndGrad total_loss_and_grads(const KoopmanModel& model, std::span<const Trajectory* const> batch,
                                 const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("total_loss_and_grads: empty batch");
  const int T = cfg.T, n_x = model.n_x(), n_u = model.n_u(), n = model.n();
  const auto b = static_cast<Eigen::Index>(batch.size());
  const double W = cfg.W();
  const bool use_ctrl = cfg.w_ctrl > 0 && n_u > 0;
  const bool use_cov = cfg.w_cov > 0 && b >= 2;

  const BatchSteps steps = gather(batch, T, n_x, n_u);
  const ParamLayout& L = model.layout();

  LossAndGrad out;
  out.grad = Vector::Zero(L.size());
  MatrixMap gA(out.grad.data() + L.a(), n, n);
  MatrixMap gB(out.grad.data() + L.b(), n, n_u);

  EncoderCache cache;
  const Matrix Zall = encode(model, use_ctrl ? hstack(steps.X) : steps.X[0], &cache);
  const auto Z = [&](int k) { return Zall.middleCols(Eigen::Index{k} * b, b); };
  Matrix dZall = Matrix::Zero(n, Zall.cols());

  // Multi-step prediction through the latent recursion.
  std::vector<Matrix> Zhat(static_cast<std::size_t>(T + 1));
  std::vector<Matrix> E(static_cast<std::size_t>(T + 1));
  Zhat[0] = Z(0);
  std::vector<double> beta_pow(static_cast<std::size_t>(T + 1), 1.0);
  for (int k = 1; k <= T; ++k) beta_pow[static_cast<std::size_t>(k)] = beta_pow[static_cast<std::size_t>(k - 1)] * cfg.beta;
  Eigen::RowVectorXd per_window = Eigen::RowVectorXd::Zero(b);
  for (int k = 0; k < T; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    Zhat[ku + 1].noalias() = model.A() * Zhat[ku];
    Zhat[ku + 1].noalias() += model.B() * steps.U[ku];
    E[ku + 1] = Zhat[ku + 1].topRows(n_x) - steps.X[ku + 1];
    per_window += beta_pow[ku + 1] * E[ku + 1].colwise().squaredNorm();
  }
  if (!per_window.allFinite())
    throw NonFiniteLossError("prediction loss is not finite", first_bad_column(per_window));
  out.loss.pred = per_window.sum() / (W * double(b));

  {
    Matrix G = Matrix::Zero(n, b);
    for (int k = T; k >= 1; --k) {
      const auto ku = static_cast<std::size_t>(k);
      G.topRows(n_x) += (2.0 * beta_pow[ku] / (W * double(b))) * E[ku];
      gA.noalias() += G * Zhat[ku - 1].transpose();
      gB.noalias() += G * steps.U[ku - 1].transpose();
      G = model.A().transpose() * G;
    }
    dZall.leftCols(b) += G;
  }

  // Centred batch covariance of the start embeddings.
  if (b >= 2) {
    const Matrix Zc = Z(0).colwise() - Z(0).rowwise().mean();
    Matrix Off = Zc * Zc.transpose() / double(b - 1);
    Off.diagonal().setZero();
    const double norm = double(n) * double(n - 1);
    out.loss.cov = Off.squaredNorm() / norm;
    if (use_cov) {
      Matrix dZc = (cfg.w_cov * 4.0 / (norm * double(b - 1))) * (Off * Zc);
      dZc.colwise() -= dZc.rowwise().mean();
      dZall.leftCols(b) += dZc;
    }
  }

  // Inverse-control recovery from encoded ground-truth transitions.
  if (use_ctrl) {
    Matrix S = model.B().transpose() * model.B();
    S.diagonal().array() += cfg.ridge_ctrl;
    const auto S_ldlt = S.ldlt();
    const Matrix Mp = S_ldlt.solve(Matrix(model.B().transpose()));
    Matrix dMp = Matrix::Zero(n_u, n);
    Eigen::RowVectorXd ctrl_window = Eigen::RowVectorXd::Zero(b);
    for (int k = 0; k < T; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      Matrix R = Z(k + 1);
      R.noalias() -= model.A() * Z(k);
      const Matrix Eu = Mp * R - steps.U[ku];
      ctrl_window += beta_pow[ku] * Eu.colwise().squaredNorm();
      const Matrix dU = (cfg.w_ctrl * 2.0 * beta_pow[ku] / (W * double(b))) * Eu;
      const Matrix dR = Mp.transpose() * dU;
      dZall.middleCols(Eigen::Index{k + 1} * b, b) += dR;
      dZall.middleCols(Eigen::Index{k} * b, b).noalias() -= model.A().transpose() * dR;
      gA.noalias() -= dR * Z(k).transpose();
      dMp.noalias() += dU * R.transpose();
    }
    if (!ctrl_window.allFinite())
      throw NonFiniteLossError("inverse-control loss is not finite", first_bad_column(ctrl_window));
    out.loss.ctrl = ctrl_window.sum() / (W * double(b));
    // Mp = S⁻¹Bᵀ with S = BᵀB + εI.
    const Matrix SinvdMp = S_ldlt.solve(dMp);
    gB += SinvdMp.transpose();
    const Matrix dS = -SinvdMp * Mp.transpose();
    gB.noalias() += model.B() * (dS + dS.transpose());
  }

  encode_backward(model, cache, dZall, out.grad);
  out.loss.total = out.loss.pred + cfg.w_cov * out.loss.cov + cfg.w_ctrl * out.loss.ctrl;
  if (!std::isfinite(out.loss.total)) throw NonFiniteLossError("composite loss is not finite", 0);
  return out;
}

double prediction_error(const KoopmanModel& model, std::span<const Trajectory* const> windows, int T) {
  if (windows.empty()) throw std::invalid_argument("prediction_error: no windows");
  const BatchSteps steps = gather(windows, T, model.n_x(), model.n_u());
  Matrix Z = encode(model, steps.X[0]);
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(Z.cols());
  for (int k = 0; k < T; ++k) {
    Matrix next = model.A() * Z;
    next.noalias() += model.B() * steps.U[static_cast<std::size_t>(k)];
    Z = std::move(next);
    acc += (Z.topRows(model.n_x()) - steps.X[static_cast<std::size_t>(k + 1)]).colwise().squaredNorm();
  }
  const double eps = acc.sum() / (double(T) * double(Z.cols()));
  return std::isfinite(eps) ? eps : std::numeric_limits<double>::infinity();
}

std::vector<const Trajectory*> usable_windows(std::span<const Trajectory* const> windows, int T) {
  std::vector<const Trajectory*> out;
  for (const Trajectory* w : windows)
    if (w->length() >= T) out.push_back(w);
  return out;
}

std::size_t batches_per_epoch(std::size_t n_windows, int batch_size) {
  const auto bs = static_cast<std::size_t>(batch_size);
  std::size_t count = (n_windows + bs - 1) / bs;
  if (count > 1 && n_windows % bs == 1) --count;
  return count;
}

int effective_epochs(const TrainConfig& cfg, std::size_t n_windows) {
  const auto per_epoch = static_cast<long long>(batches_per_epoch(n_windows, cfg.batch_size));
  if (per_epoch == 0) return cfg.epochs;
  return static_cast<int>(std::max<long long>(cfg.epochs, (cfg.min_steps + per_epoch - 1) / per_epoch));
}

std::pair<KoopmanModel, TrainReport> train(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto train_all = data.train();
  const std::vector<const Trajectory*> windows = usable_windows(train_all, cfg.T);
  if (windows.empty()) throw std::invalid_argument("train: no train window is as long as the horizon T");
  const auto test_all = data.test();
  const std::vector<const Trajectory*> test = usable_windows(test_all, cfg.T);
  if (test.empty()) throw std::invalid_argument("train: no test window is as long as the horizon T");

  KoopmanModel model = init_model(data.env.n_x, data.env.n_u, cfg.n_mult, derive_seed(cfg.seed, kInitStream), cfg.hidden);
  AdamState adam = AdamState::zeros(model.params().size(), cfg.learning_rate);
  Rng shuffler(derive_seed(cfg.seed, kShuffleStream));

  TrainReport report;
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const Trajectory*> batch;
  int over_limit = 0;

  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const int epochs = effective_epochs(cfg, windows.size());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    adam.lr = cfg.learning_rate * (epoch >= cfg.lr_decay_at * epochs ? cfg.lr_decay : 1.0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffler.below(i)]);

    EpochLoss acc;
    std::size_t start = 0;
    while (start < order.size()) {
      std::size_t stop = std::min(order.size(), start + bs);
      if (order.size() - stop == 1) stop = order.size();  // no singleton batches
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(windows[order[i]]);
      const double weight = double(batch.size()) / double(order.size());
      start = stop;

      LossAndGrad lg;
      try {
        lg = total_loss_and_grads(model, batch, cfg);
      } catch (const NonFiniteLossError&) {
        acc.total += weight * kLossClip;
        continue;
      }
      if (lg.loss.total > kLossClip || !lg.grad.allFinite()) {
        acc.total += weight * kLossClip;
        continue;
      }
      acc.total += weight * lg.loss.total;
      acc.pred += weight * lg.loss.pred;
      acc.cov += weight * lg.loss.cov;
      acc.ctrl += weight * lg.loss.ctrl;
      adam_update(model.params(), lg.grad, adam);
    }
    report.epochs.push_back(acc);
    over_limit = acc.total >= kLossClip ? over_limit + 1 : 0;
    if (over_limit >= 3) {
      report.diverged = true;
      break;
    }
  }

  report.eps_test = prediction_error(model, test, cfg.T);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(model), std::move(report)};
}

std::string serialize_model(const KoopmanModel& model) {
  Json header{{"n_x", model.n_x()}, {"n_u", model.n_u()}, {"n_mult", model.n_mult()}, {"hidden", model.hidden()},
              {"n", model.n()}};
  std::vector<NamedBlock> blocks;
  for (const auto& blk : model.layout().blocks())
    blocks.push_back({blk.name, ConstMatrixMap(model.params().data() + blk.offset, blk.rows, blk.cols)});
  return encode_blob("koopman_model", std::move(header), blocks);
}

KoopmanModel deserialize_model(const std::string& bytes) {
  const BlobFile file = decode_blob(bytes, "koopman_model");
  ParamLayout layout;
  layout.n_x = header_field<int>(file.header, "n_x");
  layout.n_u = header_field<int>(file.header, "n_u");
  layout.n_mult = header_field<int>(file.header, "n_mult");
  layout.hidden = header_field<int>(file.header, "hidden");
  if (layout.n_x < 1) throw FormatError("n_x", "must be >= 1");
  if (layout.n_u < 0) throw FormatError("n_u", "must be >= 0");
  if (layout.n_mult < 1) throw FormatError("n_mult", "must be >= 1");
  if (layout.hidden < 1) throw FormatError("hidden", "must be >= 1");
  if (header_field<int>(file.header, "n") != layout.n()) throw FormatError("n", "inconsistent with n_x and n_mult");
  KoopmanModel model(layout);
  for (const auto& blk : layout.blocks())
    MatrixMap(model.params().data() + blk.offset, blk.rows, blk.cols) = file.block(blk.name, blk.rows, blk.cols);
  return model;
}

void save_model(const KoopmanModel& model, const std::filesystem::path& path) { write_file(path, serialize_model(model)); }

KoopmanModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace koopman
