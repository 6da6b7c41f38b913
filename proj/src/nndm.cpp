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
#include "koopman/nndm.hpp"

#include "koopman/adam.hpp"
#include "koopman/rng.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace koopman {

namespace {

constexpr std::uint64_t kInitStream = 11;
constexpr std::uint64_t kShuffleStream = 12;
constexpr double kLossClip = 1e10;

struct StepCache {
  Matrix in, H1, H2;
};

Matrix forward(const NndmModel& model, const Matrix& X, const Matrix& U, StepCache* cache) {
  Matrix in(model.layout().n_in(), X.cols());
  in.topRows(model.n_x()) = X;
  in.bottomRows(model.n_u()) = U;
  Matrix H1 = ((model.W1() * in).colwise() + model.b1()).cwiseMax(0.0);
  Matrix H2 = ((model.W2() * H1).colwise() + model.b2()).cwiseMax(0.0);
  Matrix out = (model.W3() * H2).colwise() + model.b3();
  if (cache) *cache = {std::move(in), std::move(H1), std::move(H2)};
  return out;
}

// Accumulates parameter gradients; returns dL/dX for the state part of the input.
Matrix backward(const NndmModel& model, const StepCache& c, const Matrix& dOut, Vector& grad) {
  const NndmLayout& L = model.layout();
  MatrixMap gW1(grad.data() + L.w1(), L.width, L.n_in());
  VectorMap gb1(grad.data() + L.b1(), L.width);
  MatrixMap gW2(grad.data() + L.w2(), L.width, L.width);
  VectorMap gb2(grad.data() + L.b2(), L.width);
  MatrixMap gW3(grad.data() + L.w3(), L.n_x, L.width);
  VectorMap gb3(grad.data() + L.b3(), L.n_x);

  gW3.noalias() += dOut * c.H2.transpose();
  gb3 += dOut.rowwise().sum();
  Matrix dP2 = (c.H2.array() > 0.0).select(model.W3().transpose() * dOut, 0.0);
  gW2.noalias() += dP2 * c.H1.transpose();
  gb2 += dP2.rowwise().sum();
  Matrix dP1 = (c.H1.array() > 0.0).select(model.W2().transpose() * dP2, 0.0);
  gW1.noalias() += dP1 * c.in.transpose();
  gb1 += dP1.rowwise().sum();
  return (model.W1().transpose() * dP1).topRows(model.n_x());
}

void gather(std::span<const Trajectory* const> batch, int T, int n_x, int n_u, std::vector<Matrix>& X,
            std::vector<Matrix>& U) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  X.assign(static_cast<std::size_t>(T + 1), Matrix(n_x, b));
  U.assign(static_cast<std::size_t>(T), Matrix(n_u, b));
  for (Eigen::Index j = 0; j < b; ++j) {
    const Trajectory& w = *batch[static_cast<std::size_t>(j)];
    if (w.length() < T) throw std::invalid_argument("window shorter than the training horizon");
    for (int k = 0; k <= T; ++k) X[static_cast<std::size_t>(k)].col(j) = w.states.col(k);
    for (int k = 0; k < T; ++k) U[static_cast<std::size_t>(k)].col(j) = w.controls.col(k);
  }
}

}  // namespace

std::vector<ParamLayout::Block> NndmLayout::blocks() const {
  return {{"W1", w1(), width, n_in()}, {"b1", b1(), width, 1}, {"W2", w2(), width, width},
          {"b2", b2(), width, 1},      {"W3", w3(), n_x, width}, {"b3", b3(), n_x, 1}};
}

int matched_width(int n_x, int n_u, Eigen::Index target) {
  int best = 1;
  Eigen::Index best_gap = -1;
  for (int w = 1; w <= 4096; ++w) {
    const Eigen::Index count = NndmLayout{n_x, n_u, w}.size();
    const Eigen::Index gap = count > target ? count - target : target - count;
    if (best_gap < 0 || gap < best_gap) {
      best = w;
      best_gap = gap;
    }
    if (count > target) break;
  }
  return best;
}

NndmModel init_nndm(int n_x, int n_u, int width, std::uint64_t seed) {
  if (n_x < 1 || n_u < 0 || width < 1) throw std::invalid_argument("init_nndm: bad dimensions");
  NndmModel model(NndmLayout{n_x, n_u, width});
  Rng rng(seed);
  for (const auto& blk : model.layout().blocks()) {
    const double fan_in = blk.name[0] == 'W' ? double(blk.cols)
                          : blk.name[1] == '1' ? double(model.layout().n_in())
                                               : double(width);
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index i = 0; i < blk.rows * blk.cols; ++i) model.params()(blk.offset + i) = rng.uniform(-bound, bound);
  }
  return model;
}

Vector nndm_step(const NndmModel& model, const Vector& x, const Vector& u) {
  if (x.size() != model.n_x() || u.size() != model.n_u()) throw std::invalid_argument("nndm_step: dimension mismatch");
  return forward(model, Matrix(x), Matrix(u), nullptr).col(0);
}

double nndm_loss(const NndmModel& model, std::span<const Trajectory* const> batch, const TrainConfig& cfg) {
  return nndm_loss_and_grads(model, batch, cfg).loss;
}

NndmLossAndGrad nndm_loss_and_grads(const NndmModel& model, std::span<const Trajectory* const> batch,
                                    const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("nndm_loss: empty batch");
  const int T = cfg.T;
  const double W = cfg.W();
  const auto b = static_cast<double>(batch.size());
  std::vector<Matrix> X, U;
  gather(batch, T, model.n_x(), model.n_u(), X, U);

  std::vector<StepCache> caches(static_cast<std::size_t>(T));
  std::vector<Matrix> E(static_cast<std::size_t>(T + 1));
  std::vector<double> weight(static_cast<std::size_t>(T + 1), 1.0);
  Matrix xhat = X[0];
  NndmLossAndGrad out;
  for (int k = 0; k < T; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    weight[ku + 1] = weight[ku] * cfg.beta;
    xhat = forward(model, xhat, U[ku], &caches[ku]);
    E[ku + 1] = xhat - X[ku + 1];
    out.loss += weight[ku + 1] * E[ku + 1].squaredNorm();
  }
  out.loss /= W * b;

  out.grad = Vector::Zero(model.params().size());
  Matrix dX = Matrix::Zero(model.n_x(), X[0].cols());
  for (int k = T; k >= 1; --k) {
    const auto ku = static_cast<std::size_t>(k);
    dX += (2.0 * weight[ku] / (W * b)) * E[ku];
    dX = backward(model, caches[ku - 1], dX, out.grad);
  }
  return out;
}

double nndm_prediction_error(const NndmModel& model, std::span<const Trajectory* const> windows, int T) {
  std::vector<Matrix> X, U;
  gather(windows, T, model.n_x(), model.n_u(), X, U);
  Matrix xhat = X[0];
  double acc = 0;
  for (int k = 0; k < T; ++k) {
    xhat = forward(model, xhat, U[static_cast<std::size_t>(k)], nullptr);
    acc += (xhat - X[static_cast<std::size_t>(k + 1)]).squaredNorm();
  }
  const double eps = acc / (double(T) * double(X[0].cols()));
  return std::isfinite(eps) ? eps : std::numeric_limits<double>::infinity();
}

std::pair<NndmModel, TrainReport> train_nndm(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto train_all = data.train();
  const auto windows = usable_windows(train_all, cfg.T);
  const auto test_all = data.test();
  const auto test = usable_windows(test_all, cfg.T);
  if (windows.empty() || test.empty()) throw std::invalid_argument("train_nndm: no window is as long as the horizon T");

  const Eigen::Index target = ParamLayout{data.env.n_x, data.env.n_u, cfg.n_mult, cfg.hidden}.size();
  const int width = matched_width(data.env.n_x, data.env.n_u, target);
  NndmModel model = init_nndm(data.env.n_x, data.env.n_u, width, derive_seed(cfg.seed, kInitStream));
  model.matched_count = target;
  const double mismatch = std::abs(double(model.params().size() - target)) / double(target);
  if (mismatch > 0.02)
    throw std::runtime_error("train_nndm: parameter count " + std::to_string(model.params().size()) +
                             " is not within 2% of " + std::to_string(target));

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
      if (order.size() - stop == 1) stop = order.size();
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(windows[order[i]]);
      const double weight = double(batch.size()) / double(order.size());
      start = stop;
      const NndmLossAndGrad lg = nndm_loss_and_grads(model, batch, cfg);
      if (!std::isfinite(lg.loss) || lg.loss > kLossClip || !lg.grad.allFinite()) {
        acc.total += weight * kLossClip;
        continue;
      }
      acc.total += weight * lg.loss;
      acc.pred += weight * lg.loss;
      adam_update(model.params(), lg.grad, adam);
    }
    report.epochs.push_back(acc);
    over_limit = acc.total >= kLossClip ? over_limit + 1 : 0;
    if (over_limit >= 3) {
      report.diverged = true;
      break;
    }
  }
  report.eps_test = nndm_prediction_error(model, test, cfg.T);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(model), std::move(report)};
}

std::string serialize_nndm(const NndmModel& model) {
  Json header{{"n_x", model.n_x()}, {"n_u", model.n_u()}, {"width", model.width()},
              {"matched_count", model.matched_count}};
  std::vector<NamedBlock> blocks;
  for (const auto& blk : model.layout().blocks())
    blocks.push_back({blk.name, ConstMatrixMap(model.params().data() + blk.offset, blk.rows, blk.cols)});
  return encode_blob("nndm_model", std::move(header), blocks);
}

NndmModel deserialize_nndm(const std::string& bytes) {
  const BlobFile file = decode_blob(bytes, "nndm_model");
  NndmLayout layout{header_field<int>(file.header, "n_x"), header_field<int>(file.header, "n_u"),
                    header_field<int>(file.header, "width")};
  if (layout.n_x < 1 || layout.n_u < 0 || layout.width < 1) throw FormatError("width", "bad dimensions");
  NndmModel model(layout);
  model.matched_count = header_field<Eigen::Index>(file.header, "matched_count");
  for (const auto& blk : layout.blocks())
    MatrixMap(model.params().data() + blk.offset, blk.rows, blk.cols) = file.block(blk.name, blk.rows, blk.cols);
  return model;
}

}  // namespace koopman
