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
#include "koopman/edmd.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace koopman {

namespace {

void compositions(int vars, int degree, std::vector<int>& current, std::vector<std::vector<int>>& out) {
  const int pos = static_cast<int>(current.size());
  if (pos == vars - 1) {
    current.push_back(degree);
    out.push_back(current);
    current.pop_back();
    return;
  }
  for (int e = degree; e >= 0; --e) {
    current.push_back(e);
    compositions(vars, degree - e, current, out);
    current.pop_back();
  }
}

Matrix pairwise_sum(const std::function<void(std::size_t, Matrix&)>& add_term, std::size_t lo, std::size_t hi,
                    Eigen::Index rows, Eigen::Index cols) {
  if (hi - lo <= 8) {
    Matrix acc = Matrix::Zero(rows, cols);
    for (std::size_t i = lo; i < hi; ++i) add_term(i, acc);
    return acc;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  Matrix left = pairwise_sum(add_term, lo, mid, rows, cols);
  left += pairwise_sum(add_term, mid, hi, rows, cols);
  return left;
}

bool lex_less(const Transition& a, const Transition& b) {
  const auto cmp = [](const Vector& p, const Vector& q) {
    for (Eigen::Index i = 0; i < std::min(p.size(), q.size()); ++i) {
      if (p(i) < q(i)) return -1;
      if (p(i) > q(i)) return 1;
    }
    return p.size() < q.size() ? -1 : (p.size() > q.size() ? 1 : 0);
  };
  if (int c = cmp(a.x, b.x)) return c < 0;
  if (int c = cmp(a.u, b.u)) return c < 0;
  return cmp(a.x_next, b.x_next) < 0;
}

}  // namespace

std::vector<std::vector<int>> graded_lex_exponents(int n_in, int max_degree) {
  if (n_in < 1 || max_degree < 0) throw std::invalid_argument("graded_lex_exponents: bad arguments");
  std::vector<std::vector<int>> out;
  std::vector<int> current;
  for (int d = 0; d <= max_degree; ++d) compositions(n_in, d, current, out);
  return out;
}

Dictionary Dictionary::identity(int n_in) {
  if (n_in < 1) throw std::invalid_argument("Dictionary::identity: n_in must be >= 1");
  Dictionary d;
  d.kind_ = DictionaryKind::Identity;
  d.n_in_ = d.n_ = n_in;
  return d;
}

Dictionary Dictionary::polynomial(int n_in, int max_degree) {
  if (max_degree < 1) throw std::invalid_argument("Dictionary::polynomial: max_degree must be >= 1");
  Dictionary d;
  d.kind_ = DictionaryKind::Polynomial;
  d.n_in_ = n_in;
  d.max_degree_ = max_degree;
  d.exponents_ = graded_lex_exponents(n_in, max_degree);
  d.n_ = static_cast<int>(d.exponents_.size());
  return d;
}

Dictionary Dictionary::neural(std::shared_ptr<const KoopmanModel> model) {
  if (!model) throw std::invalid_argument("Dictionary::neural: null model");
  Dictionary d;
  d.kind_ = DictionaryKind::StateAugmentedNeural;
  d.n_in_ = model->n_x();
  d.n_ = model->n();
  d.model_ = std::move(model);
  return d;
}

std::vector<int> Dictionary::state_rows() const {
  std::vector<int> rows(static_cast<std::size_t>(n_in_));
  // Polynomial lifts start with the constant; the degree-1 block follows.
  std::iota(rows.begin(), rows.end(), kind_ == DictionaryKind::Polynomial ? 1 : 0);
  return rows;
}

Vector Dictionary::lift(const Vector& x) const { return lift(Matrix(x)).col(0); }

Matrix Dictionary::lift(const Matrix& X) const {
  if (X.rows() != n_in_) throw std::invalid_argument("Dictionary::lift: input dimension mismatch");
  switch (kind_) {
    case DictionaryKind::Identity: return X;
    case DictionaryKind::StateAugmentedNeural: return encode(*model_, X);
    case DictionaryKind::Polynomial: break;
  }
  Matrix out(n_, X.cols());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    for (int r = 0; r < n_; ++r) {
      double v = 1.0;
      const auto& e = exponents_[static_cast<std::size_t>(r)];
      for (int i = 0; i < n_in_; ++i)
        for (int p = 0; p < e[static_cast<std::size_t>(i)]; ++p) v *= X(i, c);
      out(r, c) = v;
    }
  }
  return out;
}

Json Dictionary::descriptor() const {
  switch (kind_) {
    case DictionaryKind::Identity: return {{"kind", "identity"}, {"n_in", n_in_}, {"n", n_}};
    case DictionaryKind::Polynomial:
      return {{"kind", "polynomial"}, {"n_in", n_in_}, {"n", n_}, {"max_degree", max_degree_}, {"order", "graded-lex"}};
    case DictionaryKind::StateAugmentedNeural:
      return {{"kind", "neural"}, {"n_in", n_in_}, {"n", n_}, {"n_mult", model_->n_mult()}, {"hidden", model_->hidden()}};
  }
  return {};
}

std::vector<Transition> transitions(const Dataset& data) {
  std::vector<Transition> out;
  for (const Trajectory* w : data.train())
    for (Eigen::Index t = 0; t < w->length(); ++t) out.push_back({w->states.col(t), w->controls.col(t), w->states.col(t + 1)});
  return out;
}

GramPair gram_matrices(const std::vector<Transition>& samples, const Dictionary& dict) {
  if (samples.empty()) throw std::invalid_argument("gram_matrices: no samples");
  const auto m = samples.size();
  const auto n_u = samples.front().u.size();
  const Eigen::Index n = dict.n();

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lex_less(samples[a], samples[b]); });

  Matrix X(dict.n_in(), static_cast<Eigen::Index>(m)), Xn(dict.n_in(), static_cast<Eigen::Index>(m));
  Matrix U(n_u, static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    const Transition& s = samples[order[i]];
    X.col(static_cast<Eigen::Index>(i)) = s.x;
    Xn.col(static_cast<Eigen::Index>(i)) = s.x_next;
    U.col(static_cast<Eigen::Index>(i)) = s.u;
  }
  Matrix S(n + n_u, static_cast<Eigen::Index>(m));
  S.topRows(n) = dict.lift(X);
  S.bottomRows(n_u) = U;
  const Matrix Sn = dict.lift(Xn);

  GramPair out;
  out.G = pairwise_sum([&](std::size_t i, Matrix& acc) {
            const auto c = S.col(static_cast<Eigen::Index>(i));
            acc.noalias() += c * c.transpose();
          }, 0, m, n + n_u, n + n_u) / double(m);
  out.A_cross = pairwise_sum([&](std::size_t i, Matrix& acc) {
                  acc.noalias() += Sn.col(static_cast<Eigen::Index>(i)) * S.col(static_cast<Eigen::Index>(i)).transpose();
                }, 0, m, n, n + n_u) / double(m);
  return out;
}

GramPair gram_matrices(const Dataset& data, const Dictionary& dict) { return gram_matrices(transitions(data), dict); }

double default_ridge(const Dictionary& dict, const Matrix& G) {
  if (dict.kind() != DictionaryKind::StateAugmentedNeural) return 0.0;
  return 1e-8 * G.trace() / double(dict.n());
}

EdmdModel edmd_fit(const std::vector<Transition>& samples, const Dictionary& dict, int n_u,
                   std::optional<double> ridge) {
  if (samples.empty()) throw std::invalid_argument("edmd_fit: no samples");
  if (samples.front().u.size() != n_u) throw std::invalid_argument("edmd_fit: control dimension mismatch");
  const GramPair gp = gram_matrices(samples, dict);
  EdmdModel model;
  model.dict = dict;
  model.n_u = n_u;
  model.ridge = ridge.value_or(default_ridge(dict, gp.G));
  if (model.ridge < 0) throw std::invalid_argument("edmd_fit: ridge must be non-negative");

  const SymEig<double> eig = sym_eig(gp.G);
  model.lambda_min_G = eig.values(0);
  model.kappa_G = cond_spd(gp.G);
  if (model.ridge == 0 && model.lambda_min_G <= 1e-14) throw IllConditionedError(model.lambda_min_G);

  Matrix Greg = gp.G;
  Greg.diagonal().array() += model.ridge;
  // K Greg = A_cross, Greg symmetric.
  model.K = Greg.ldlt().solve(gp.A_cross.transpose()).transpose();
  const int n = dict.n();
  model.A = model.K.leftCols(n);
  model.B = model.K.rightCols(n_u);
  return model;
}

EdmdModel edmd_fit(const Dataset& data, const Dictionary& dict, std::optional<double> ridge) {
  return edmd_fit(transitions(data), dict, data.env.n_u, ridge);
}

double state_fit_residual(const EdmdModel& model, const std::vector<Transition>& samples) {
  if (samples.empty()) throw std::invalid_argument("state_fit_residual: no samples");
  const auto rows = model.dict.state_rows();
  double acc = 0;
  for (const Transition& s : samples) {
    const Vector z_next = model.A * model.dict.lift(s.x) + model.B * s.u;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double e = z_next(rows[i]) - s.x_next(static_cast<Eigen::Index>(i));
      acc += e * e;
    }
  }
  return acc / double(samples.size());
}

EdmdRollout edmd_rollout(const EdmdModel& model, const Vector& x0, const Matrix& controls, int T) {
  if (T < 1) throw std::invalid_argument("edmd_rollout: T must be >= 1");
  if (controls.rows() != model.n_u || controls.cols() < T)
    throw std::invalid_argument("edmd_rollout: controls must be n_u x T");
  const auto rows = model.dict.state_rows();
  EdmdRollout out;
  out.x.resize(model.dict.n_in(), T);
  Vector z = model.dict.lift(x0);
  for (int k = 0; k < T; ++k) {
    z = model.A * z + model.B * controls.col(k);
    if (!z.allFinite() || z.norm() > kBlowUpNorm) {
      out.truncated = true;
      out.x.conservativeResize(Eigen::NoChange, k);
      break;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) out.x(static_cast<Eigen::Index>(i), k) = z(rows[i]);
  }
  return out;
}

std::string serialize_edmd(const EdmdModel& model) {
  Json header{{"dictionary", model.dict.descriptor()},
              {"n_u", model.n_u},
              {"n", model.dict.n()},
              {"ridge", model.ridge},
              {"lambda_min_G", json_number(model.lambda_min_G)},
              {"kappa_G", json_number(model.kappa_G)}};
  std::vector<NamedBlock> blocks{{"K", model.K}, {"A", model.A}, {"B", model.B}};
  if (const auto& enc = model.dict.model()) {
    header["encoder"] = {{"n_x", enc->n_x()}, {"n_u", enc->n_u()}, {"n_mult", enc->n_mult()}, {"hidden", enc->hidden()}};
    for (const auto& blk : enc->layout().blocks())
      blocks.push_back({std::string("encoder.") + blk.name, ConstMatrixMap(enc->params().data() + blk.offset, blk.rows, blk.cols)});
  }
  return encode_blob("edmd_model", std::move(header), blocks);
}

EdmdModel deserialize_edmd(const std::string& bytes) {
  const BlobFile file = decode_blob(bytes, "edmd_model");
  const Json desc = header_field<Json>(file.header, "dictionary");
  const auto kind = header_field<std::string>(desc, "kind");
  const int n_in = header_field<int>(desc, "n_in");
  EdmdModel model;
  if (kind == "identity") {
    model.dict = Dictionary::identity(n_in);
  } else if (kind == "polynomial") {
    model.dict = Dictionary::polynomial(n_in, header_field<int>(desc, "max_degree"));
  } else if (kind == "neural") {
    const Json enc = header_field<Json>(file.header, "encoder");
    ParamLayout layout{header_field<int>(enc, "n_x"), header_field<int>(enc, "n_u"), header_field<int>(enc, "n_mult"),
                       header_field<int>(enc, "hidden")};
    auto km = std::make_shared<KoopmanModel>(layout);
    for (const auto& blk : layout.blocks())
      MatrixMap(km->params().data() + blk.offset, blk.rows, blk.cols) =
          file.block(std::string("encoder.") + blk.name, blk.rows, blk.cols);
    model.dict = Dictionary::neural(std::move(km));
  } else {
    throw FormatError("dictionary", "unknown dictionary kind '" + kind + "'");
  }
  if (header_field<int>(desc, "n") != model.dict.n()) throw FormatError("n", "dictionary size mismatch");
  model.n_u = header_field<int>(file.header, "n_u");
  model.ridge = header_field<double>(file.header, "ridge");
  model.lambda_min_G = number_field(file.header, "lambda_min_G");
  model.kappa_G = number_field(file.header, "kappa_G");
  const int n = model.dict.n();
  model.K = file.block("K", n, n + model.n_u);
  model.A = file.block("A", n, n);
  model.B = file.block("B", n, model.n_u);
  return model;
}

}  // namespace koopman
