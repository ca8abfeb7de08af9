// Copyright 2026 The LURM Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "lurm/smen.hpp"

#include "lurm/errors.hpp"
#include "lurm/hashing.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace lurm {

namespace {

MatR uniform_init(Index rows, Index cols, Real bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  MatR m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(dist(rng));
  return m;
}

const char* const kGruNames[12] = {"wir", "wiz", "win", "whr", "whz", "whn",
                                   "bir", "biz", "bin", "bhr", "bhz", "bhn"};

}  // namespace

// --- GRU -------------------------------------------------------------------------------------

Gru::Gru(const std::string& prefix, Index dim, std::mt19937_64& rng) : dim_(dim) {
  const Real bound = Real(1) / std::sqrt(static_cast<Real>(dim));
  p_.reserve(12);
  for (int k = 0; k < 6; ++k) p_.emplace_back(prefix + kGruNames[k], uniform_init(dim, dim, bound, rng));
  for (int k = 6; k < 12; ++k) p_.emplace_back(prefix + kGruNames[k], MatR::Zero(1, dim));
}

Var<Real> Gru::step(Tape<Real>& t, const Var<Real>& x, const Var<Real>& h) {
  auto P = [&](int k) { return t.parameter(p_[static_cast<std::size_t>(k)]); };
  auto affine = [&](const Var<Real>& in, int w, int b) { return add(matmul_transposed(in, P(w)), P(b)); };
  Var<Real> r = sigmoid(add(affine(x, 0, 6), affine(h, 3, 9)));
  Var<Real> z = sigmoid(add(affine(x, 1, 7), affine(h, 4, 10)));
  Var<Real> n = tanh(add(affine(x, 2, 8), mul(r, affine(h, 5, 11))));
  return add(n, mul(z, sub(h, n)));
}

Var<Real> Gru::run(Tape<Real>& t, const std::vector<Var<Real>>& steps) {
  if (steps.empty()) throw std::invalid_argument("Gru::run: empty sequence");
  const Index rows = steps.front().rows();
  Var<Real> h = t.constant(MatR::Zero(rows, dim_));
  for (const auto& x : steps) {
    const Index active = x.rows();
    if (x.cols() != dim_) throw ShapeError("Gru::run: input " + shape_string(x.rows(), x.cols()));
    if (active > h.rows()) throw ShapeError("Gru::run: active streams must not grow");
    if (active == rows) {
      h = step(t, x, h);
    } else if (active > 0) {
      Var<Real> head = step(t, x, slice_rows(h, 0, active));
      h = concat_rows<Real>({head, slice_rows(h, active, rows - active)});
    }
  }
  return h;
}

std::vector<Parameter<Real>*> Gru::parameters() {
  std::vector<Parameter<Real>*> out;
  for (auto& p : p_) out.push_back(&p);
  return out;
}

Parameter<Real>& Gru::get(const std::string& short_name) {
  for (int k = 0; k < 12; ++k) {
    if (short_name == kGruNames[k]) return p_[static_cast<std::size_t>(k)];
  }
  throw std::invalid_argument("Gru: no parameter " + short_name);
}

// --- model -------------------------------------------------------------------------------------

SmenModel::SmenModel(SmenConfig config, std::uint64_t seed) : config_(config) {
  const Index d = config_.clusters, m = config_.anchors, h = config_.dim;
  if (d < 1 || m < 1 || h < 1) throw std::invalid_argument("SmenModel: D, M and H must be positive");
  if (config_.scales < 1 || config_.scales > 2) throw std::invalid_argument("SmenModel: scales must be 1 or 2");
  if (!(config_.tau > 0)) throw std::invalid_argument("SmenModel: tau must be positive");
  std::mt19937_64 rng(seed);
  const Real bound = Real(1) / std::sqrt(static_cast<Real>(h));
  const Index g = config_.vector_gate ? h : 1;
  params_.reserve(static_cast<std::size_t>(8 + m));
  add_parameter("We", uniform_init(d, h, bound, rng));
  add_parameter("Wa", uniform_init(m, h, bound, rng));
  add_parameter("Wp", uniform_init(h, h, bound, rng));
  add_parameter("gate.w", uniform_init(m * g, 2 * h, bound, rng));
  add_parameter("gate.b", MatR::Zero(m, g));
  for (Index i = 0; i < m; ++i) add_parameter("head.w1." + std::to_string(i), uniform_init(h, h, bound, rng));
  add_parameter("head.w2", uniform_init(m * h, m * h, bound, rng));
  add_parameter("head.w3", uniform_init(m, m, bound, rng));
  const std::size_t n_gru = config_.per_anchor_gru ? static_cast<std::size_t>(m) : 1;
  for (std::size_t k = 0; k < n_gru; ++k) grus_.emplace_back("gru" + std::to_string(k) + ".", h, rng);
}

Parameter<Real>& SmenModel::add_parameter(std::string name, MatR value) {
  params_.emplace_back(std::move(name), std::move(value));
  return params_.back();
}

Parameter<Real>& SmenModel::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  for (auto& g : grus_) {
    for (auto* p : g.parameters()) {
      if (p->name == name) return *p;
    }
  }
  throw std::invalid_argument("SmenModel: no parameter " + name);
}

std::vector<Parameter<Real>*> SmenModel::parameters() {
  std::vector<Parameter<Real>*> out;
  for (auto& p : params_) out.push_back(&p);
  for (auto& g : grus_) {
    for (auto* p : g.parameters()) out.push_back(p);
  }
  return out;
}

CooMatrix<Real> SmenModel::anchor_selector(Index views, Index anchor) const {
  const Index m = config_.anchors;
  CooMatrix<Real> sel(views, views * m);
  sel.reserve(static_cast<std::size_t>(views));
  for (Index v = 0; v < views; ++v) sel.add(v, v * m + anchor, 1);
  return sel;
}

MatR SmenModel::anchor_logits(std::span<const Index> interests) const {
  const auto& we = params_[0].value;
  MatR rows(static_cast<Index>(interests.size()), config_.dim);
  for (std::size_t k = 0; k < interests.size(); ++k) rows.row(static_cast<Index>(k)) = we.row(interests[k]);
  const MatR keys = rows.cwiseMax(Real(0)) * params_[2].value.transpose();
  return keys * params_[1].value.transpose();
}

MatR SmenModel::attention(std::span<const Index> interests) const {
  Tape<Real> t(false);
  return softmax_rows(t.constant(anchor_logits(interests))).value();
}

void SmenModel::enable_attention_cache() {
  std::vector<Index> all(static_cast<std::size_t>(config_.clusters));
  std::iota(all.begin(), all.end(), Index(0));
  attention_cache_ = attention(all);
}

Var<Real> SmenModel::multi_anchor(Tape<Real>& t, std::span<const SparseVector* const> bs) {
  const Index m = config_.anchors, h = config_.dim, d = config_.clusters;
  const Index n = static_cast<Index>(bs.size());
  std::vector<Index> interests;
  std::size_t nnz = 0;
  for (const SparseVector* b : bs) {
    if (b->dim() != d) {
      throw ShapeError("multi_anchor: BoI of dim " + std::to_string(b->dim()) + " for a model with D=" + std::to_string(d));
    }
    for (const auto& e : b->entries()) interests.push_back(e.first);
    nnz += b->entries().size();
  }
  std::sort(interests.begin(), interests.end());
  interests.erase(std::unique(interests.begin(), interests.end()), interests.end());
  if (interests.empty()) return t.constant(MatR::Zero(n * m, h));
  const Index u = static_cast<Index>(interests.size());
  auto slot = [&](Index j) {
    return static_cast<Index>(std::lower_bound(interests.begin(), interests.end(), j) - interests.begin());
  };

  CooMatrix<Real> pick(u, d);
  pick.reserve(static_cast<std::size_t>(u));
  for (Index k = 0; k < u; ++k) pick.add(k, interests[static_cast<std::size_t>(k)], 1);
  Var<Real> we_u = sparse_dense_matmul(pick, t.parameter(params_[0]));

  CooMatrix<Real> pattern(n * m, u);
  pattern.reserve(nnz * static_cast<std::size_t>(m));
  if (!t.grad_enabled() && attention_cache_) {
    for (Index b = 0; b < n; ++b) {
      for (const auto& [j, x] : bs[static_cast<std::size_t>(b)]->entries()) {
        const Index k = slot(j);
        for (Index i = 0; i < m; ++i) pattern.add(b * m + i, k, (*attention_cache_)(j, i) * x);
      }
    }
    return relu(sparse_dense_matmul(pattern, we_u));
  }

  Var<Real> keys = matmul_transposed(relu(we_u), t.parameter(params_[2]));
  Var<Real> alpha = softmax_rows(matmul_transposed(keys, t.parameter(params_[1])));
  // entry e of `gather` picks alpha(k, i) and scales it by b_j
  CooMatrix<Real> gather(static_cast<Index>(nnz) * m, u * m);
  gather.reserve(nnz * static_cast<std::size_t>(m));
  Index e = 0;
  for (Index b = 0; b < n; ++b) {
    for (const auto& [j, x] : bs[static_cast<std::size_t>(b)]->entries()) {
      const Index k = slot(j);
      for (Index i = 0; i < m; ++i) {
        pattern.add(b * m + i, k, 0);
        gather.add(e++, k * m + i, x);
      }
    }
  }
  Var<Real> weights = sparse_dense_matmul(gather, reshape(alpha, u * m, 1));
  return relu(sparse_dense_matmul(pattern, weights, we_u));
}

Var<Real> SmenModel::aggregate_time(Tape<Real>& t, const std::vector<const std::vector<SparseVector>*>& sequences) {
  const Index m = config_.anchors;
  const Index v = static_cast<Index>(sequences.size());
  if (v == 0) throw std::invalid_argument("aggregate_time: no sequences");
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (const auto* s : sequences) {
    if (s->empty()) throw std::invalid_argument("aggregate_time: empty sequence");
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sequences[a]->size() > sequences[b]->size(); });
  const std::size_t steps = sequences[order.front()]->size();

  std::vector<const SparseVector*> flat;
  std::vector<std::pair<Index, Index>> step_span;  // (first period, active views)
  for (std::size_t s = 0; s < steps; ++s) {
    Index active = 0;
    const Index first = static_cast<Index>(flat.size());
    for (std::size_t k : order) {
      if (sequences[k]->size() <= s) break;
      flat.push_back(&(*sequences[k])[s]);
      ++active;
    }
    step_span.emplace_back(first, active);
  }
  Var<Real> x = multi_anchor(t, flat);

  Var<Real> h;
  if (!config_.per_anchor_gru) {
    std::vector<Var<Real>> inputs;
    for (const auto& [first, active] : step_span) inputs.push_back(slice_rows(x, first * m, active * m));
    h = grus_[0].run(t, inputs);
  } else {
    std::vector<Var<Real>> per_anchor;
    for (Index i = 0; i < m; ++i) {
      std::vector<Var<Real>> inputs;
      for (const auto& [first, active] : step_span) {
        CooMatrix<Real> sel(active, x.rows());
        for (Index a = 0; a < active; ++a) sel.add(a, (first + a) * m + i, 1);
        inputs.push_back(sparse_dense_matmul(sel, x));
      }
      per_anchor.push_back(grus_[static_cast<std::size_t>(i)].run(t, inputs));
    }
    h = reshape(concat_cols(per_anchor), v * m, config_.dim);
  }

  bool identity = true;
  for (std::size_t k = 0; k < order.size(); ++k) identity = identity && order[k] == k;
  if (identity) return h;
  CooMatrix<Real> perm(v * m, v * m);
  perm.reserve(static_cast<std::size_t>(v * m));
  for (std::size_t s = 0; s < order.size(); ++s) {
    for (Index i = 0; i < m; ++i) perm.add(static_cast<Index>(order[s]) * m + i, static_cast<Index>(s) * m + i, 1);
  }
  return sparse_dense_matmul(perm, h);
}

Var<Real> SmenModel::gate(Tape<Real>& t, const Var<Real>& fine, const Var<Real>& coarse) {
  const Index m = config_.anchors, h = config_.dim;
  const Index g = config_.vector_gate ? h : 1;
  if (fine.rows() != coarse.rows() || fine.cols() != h || coarse.cols() != h || fine.rows() % m != 0) {
    throw ShapeError("fuse: " + shape_string(fine.rows(), fine.cols()) + " and " +
                     shape_string(coarse.rows(), coarse.cols()) + " for M=" + std::to_string(m));
  }
  const Index v = fine.rows() / m;
  Var<Real> both = concat_cols<Real>({fine, coarse});
  Var<Real> w = t.parameter(params_[3]);
  Var<Real> b = t.parameter(params_[4]);
  std::vector<Var<Real>> logits;
  for (Index i = 0; i < m; ++i) {
    Var<Real> rows = m == 1 ? both : sparse_dense_matmul(anchor_selector(v, i), both);
    logits.push_back(add(matmul_transposed(rows, slice_rows(w, i * g, g)), slice_rows(b, i, 1)));
  }
  return sigmoid(reshape(concat_cols(logits), v * m, g));
}

Var<Real> SmenModel::fuse(Tape<Real>& t, const Var<Real>& fine, const Var<Real>& coarse) {
  Var<Real> s = gate(t, fine, coarse);
  return add(coarse, mul(sub(fine, coarse), s));
}

Var<Real> SmenModel::head(Tape<Real>& t, const Var<Real>& anchors) {
  const Index m = config_.anchors, h = config_.dim;
  if (anchors.cols() != h || anchors.rows() % m != 0) {
    throw ShapeError("head: anchors " + shape_string(anchors.rows(), anchors.cols()) + " for M=" + std::to_string(m) +
                     ", H=" + std::to_string(h));
  }
  const Index v = anchors.rows() / m;
  std::vector<Var<Real>> rows;
  for (Index i = 0; i < m; ++i) {
    Var<Real> r = m == 1 ? anchors : sparse_dense_matmul(anchor_selector(v, i), anchors);
    Var<Real> p = matmul_transposed(r, t.parameter(params_[static_cast<std::size_t>(5 + i)]));
    rows.push_back(reshape(relu(p), 1, v * h));
  }
  // row i holds anchor i of every view, so W3 mixes anchors view by view
  Var<Real> q = concat_rows(rows);
  Var<Real> y = relu(add(q, matmul(t.parameter(params_[static_cast<std::size_t>(6 + m)]), q)));
  std::vector<Var<Real>> blocks;
  for (Index i = 0; i < m; ++i) blocks.push_back(reshape(slice_rows(y, i, 1), v, h));
  return matmul_transposed(concat_cols(blocks), t.parameter(params_[static_cast<std::size_t>(5 + m)]));
}

Var<Real> SmenModel::represent(Tape<Real>& t, std::span<const SmenView> views) {
  if (views.empty()) throw std::invalid_argument("represent: no views");
  std::vector<Var<Real>> per_scale;
  for (std::size_t k = 0; k < config_.scales; ++k) {
    std::vector<const std::vector<SparseVector>*> seqs;
    for (const auto& view : views) {
      if (view.scales.size() < config_.scales) {
        throw std::invalid_argument("represent: view has " + std::to_string(view.scales.size()) + " scale(s), model uses " +
                                    std::to_string(config_.scales));
      }
      seqs.push_back(&view.scales[k]);
    }
    per_scale.push_back(aggregate_time(t, seqs));
  }
  if (config_.scales == 1) return per_scale[0];
  return fuse(t, per_scale[0], per_scale[1]);
}

Var<Real> SmenModel::loss(Tape<Real>& t, std::span<const SmenView> views) {
  return info_nce_loss(l2_normalize_rows(head(t, represent(t, views))), config_.tau);
}

MatR SmenModel::infer(std::span<const SmenView> views) {
  Tape<Real> t(false);
  Var<Real> r = represent(t, views);
  return Eigen::Map<const MatR>(r.value().data(), static_cast<Index>(views.size()), output_dim());
}

Checkpoint SmenModel::to_checkpoint() const {
  Checkpoint ck;
  ck.meta["kind"] = "smen";
  ck.meta["clusters"] = config_.clusters;
  ck.meta["anchors"] = config_.anchors;
  ck.meta["dim"] = config_.dim;
  ck.meta["tau"] = config_.tau;
  ck.meta["scales"] = config_.scales;
  ck.meta["vector_gate"] = config_.vector_gate;
  ck.meta["per_anchor_gru"] = config_.per_anchor_gru;
  for (const auto& p : params_) ck.put(p.name, p.value);
  for (const auto& g : grus_) {
    for (auto* p : const_cast<Gru&>(g).parameters()) ck.put(p->name, p->value);
  }
  return ck;
}

SmenModel SmenModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "smen") throw DataError("checkpoint is not a SMEN model");
  SmenConfig cfg;
  cfg.clusters = ck.meta.at("clusters").get<Index>();
  cfg.anchors = ck.meta.at("anchors").get<Index>();
  cfg.dim = ck.meta.at("dim").get<Index>();
  cfg.tau = ck.meta.at("tau").get<Real>();
  cfg.scales = ck.meta.at("scales").get<std::size_t>();
  cfg.vector_gate = ck.meta.at("vector_gate").get<bool>();
  cfg.per_anchor_gru = ck.meta.at("per_anchor_gru").get<bool>();
  SmenModel model(cfg, 0);
  for (auto* p : model.parameters()) {
    const MatR& v = ck.tensor(p->name);
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
      throw DataError("SMEN checkpoint: tensor " + p->name + " has shape " + shape_string(v.rows(), v.cols()));
    }
    *p = Parameter<Real>(p->name, v);
  }
  return model;
}

// --- views --------------------------------------------------------------------------------------

std::optional<std::pair<PeriodRange, PeriodRange>> sample_view_ranges(std::span<const SparseVector> fine,
                                                                      std::mt19937_64& rng) {
  std::vector<std::size_t> nonempty;
  for (std::size_t p = 0; p < fine.size(); ++p) {
    if (!fine[p].empty()) nonempty.push_back(p);
  }
  const std::size_t k = nonempty.size();
  if (k < 2) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pos(0, k - 1);
  auto draw = [&] {
    std::size_t a = pos(rng), b = pos(rng);
    if (a > b) std::swap(a, b);
    return std::pair{a, b};
  };
  std::pair<std::size_t, std::size_t> x{0, 0}, y{k - 1, k - 1};
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const auto p = draw();
    const auto q = draw();
    const bool nested = (p.first <= q.first && q.second <= p.second) || (q.first <= p.first && p.second <= q.second);
    if (!nested) {
      x = p;
      y = q;
      break;
    }
  }
  return std::pair{PeriodRange{nonempty[x.first], nonempty[x.second]}, PeriodRange{nonempty[y.first], nonempty[y.second]}};
}

SmenView make_view(const UserBoI& user, PeriodRange range, std::span<const TimePartition> partitions, bool integral) {
  if (user.scales.empty()) throw std::invalid_argument("make_view: user has no sequences");
  const auto& fine = user.scales[0].periods;
  if (range.first > range.last || range.last >= fine.size()) throw std::out_of_range("make_view: range outside history");
  SmenView view;
  const std::span<const SparseVector> slice(fine.data() + range.first, range.last - range.first + 1);
  view.scales.emplace_back(slice.begin(), slice.end());
  for (std::size_t s = 1; s < user.scales.size() && s < partitions.size(); ++s) {
    view.scales.push_back(aggregate_scale(slice, range.first, partitions[0], partitions[s], integral));
  }
  return view;
}

SmenView history_view(const UserBoI& user, std::span<const TimePartition> partitions, bool integral) {
  if (user.scales.empty()) throw std::invalid_argument("history_view: user has no sequences");
  const auto& fine = user.scales[0].periods;
  const auto nonempty = [](const SparseVector& v) { return !v.empty(); };
  const auto first = std::find_if(fine.begin(), fine.end(), nonempty);
  if (first == fine.end()) throw std::invalid_argument("history_view: no behavior in window");
  const auto last = std::find_if(fine.rbegin(), fine.rend(), nonempty);
  return make_view(user, {static_cast<std::size_t>(first - fine.begin()), static_cast<std::size_t>(fine.rend() - last - 1)},
                   partitions, integral);
}

// --- training -------------------------------------------------------------------------------------

SmenTrainResult train_smen(const BoIStore& store, const SmenTrainConfig& config, std::span<const std::size_t> users) {
  if (config.batch < 2) throw std::invalid_argument("train_smen: batch must be >= 2");
  if (config.model.clusters != store.clusters) {
    throw DataError("train_smen: model D=" + std::to_string(config.model.clusters) + " but BoI store has D=" +
                    std::to_string(store.clusters));
  }
  if (store.granularities.size() < config.model.scales) {
    throw DataError("train_smen: model uses " + std::to_string(config.model.scales) + " scale(s), BoI store has " +
                    std::to_string(store.granularities.size()));
  }
  std::vector<std::size_t> pool;
  if (users.empty()) {
    pool.resize(store.users.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
  } else {
    pool.assign(users.begin(), users.end());
  }
  std::vector<std::size_t> eligible;
  for (std::size_t u : pool) {
    if (u >= store.users.size()) throw std::out_of_range("train_smen: user index out of range");
    if (store.users[u].nonempty_periods(0) >= 2) eligible.push_back(u);
  }
  if (eligible.size() < 2) {
    throw DataError("train_smen: " + std::to_string(eligible.size()) +
                    " user(s) with at least two nonempty periods; need at least 2");
  }
  const auto partitions = store.partitions();

  SmenTrainResult result{SmenModel(config.model, derive_seed(config.seed, "init")), {}, {}};
  SmenModel& model = result.model;
  Adam<Real> adam(model.parameters(), {.lr = config.lr});
  Tape<Real> tape;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(config.seed, "epoch" + std::to_string(epoch));
    std::mt19937_64 rng(epoch_seed);
    std::vector<std::size_t> order = eligible;
    std::shuffle(order.begin(), order.end(), rng);
    Real epoch_sum = 0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t stop = std::min(order.size(), start + config.batch);
      if (stop - start < 2) break;
      std::vector<SmenView> views;
      views.reserve(2 * (stop - start));
      for (std::size_t k = start; k < stop; ++k) {
        const UserBoI& user = store.users[order[k]];
        std::mt19937_64 user_rng(derive_seed(epoch_seed, user.user_id));
        const auto ranges = sample_view_ranges(user.scales[0].periods, user_rng);
        views.push_back(make_view(user, ranges->first, partitions, store.integral()));
        views.push_back(make_view(user, ranges->second, partitions, store.integral()));
      }
      tape.reset();
      Var<Real> loss = model.loss(tape, views);
      tape.backward(loss);
      adam.step();
      result.step_losses.push_back(loss.scalar());
      epoch_sum += loss.scalar();
      ++epoch_steps;
    }
    result.epoch_losses.push_back(epoch_steps ? epoch_sum / static_cast<Real>(epoch_steps) : Real(0));
  }
  return result;
}

// --- inference ----------------------------------------------------------------------------------------

std::vector<UserRepresentation> infer_representations(SmenModel& model, std::span<const UserBoI> users,
                                                      std::span<const TimePartition> partitions, bool integral,
                                                      std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("infer_representations: batch must be positive");
  const Index m = model.config().anchors, h = model.config().dim;
  std::vector<UserRepresentation> out(users.size());
  std::vector<std::size_t> pending;
  auto flush = [&] {
    if (pending.empty()) return;
    std::vector<SmenView> views;
    for (std::size_t u : pending) views.push_back(history_view(users[u], partitions, integral));
    const MatR r = model.infer(views);
    for (std::size_t k = 0; k < pending.size(); ++k) out[pending[k]].values = r.row(static_cast<Index>(k)).transpose();
    pending.clear();
  };
  for (std::size_t u = 0; u < users.size(); ++u) {
    out[u].user_id = users[u].user_id;
    out[u].anchors = m;
    out[u].dim = h;
    if (users[u].nonempty_periods(0) == 0) {
      out[u].empty = true;
      out[u].values = VecR::Zero(m * h);
      continue;
    }
    pending.push_back(u);
    if (pending.size() == batch) flush();
  }
  flush();
  return out;
}

UserRepresentation infer_representation(const std::vector<BehaviorEvent>& events, const ItemEncoder& encoder,
                                        const InterestVocabulary& vocab, SmenModel& model,
                                        std::span<const Granularity> granularities, TimeRange window) {
  UserBoI user = build_boi_sequences(events, vocab, encoder, granularities, window);
  std::vector<TimePartition> parts;
  for (Granularity g : granularities) parts.push_back(make_partition(g, window));
  auto reps = infer_representations(model, std::span<const UserBoI>(&user, 1), parts,
                                    vocab.mode() == AssignmentMode::kHard, 1);
  return std::move(reps.front());
}

Checkpoint representations_to_checkpoint(std::span<const UserRepresentation> reps) {
  Checkpoint ck;
  ck.meta["kind"] = "representations";
  const Index m = reps.empty() ? 0 : reps.front().anchors;
  const Index h = reps.empty() ? 0 : reps.front().dim;
  ck.meta["anchors"] = m;
  ck.meta["dim"] = h;
  MatR values(static_cast<Index>(reps.size()), m * h);
  nlohmann::json users = nlohmann::json::array(), empty = nlohmann::json::array();
  for (std::size_t u = 0; u < reps.size(); ++u) {
    const auto& r = reps[u];
    if (r.anchors != m || r.dim != h || r.values.size() != m * h) {
      throw ShapeError("representations_to_checkpoint: mixed shapes");
    }
    values.row(static_cast<Index>(u)) = r.values.transpose();
    users.push_back(r.user_id);
    empty.push_back(r.empty);
  }
  ck.meta["users"] = std::move(users);
  ck.meta["empty"] = std::move(empty);
  ck.put("values", values);
  return ck;
}

std::vector<UserRepresentation> representations_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "representations" || !ck.has("values")) {
    throw DataError("checkpoint does not hold representations");
  }
  const MatR& values = ck.tensor("values");
  const auto& users = ck.meta.at("users");
  const auto& empty = ck.meta.at("empty");
  if (static_cast<Index>(users.size()) != values.rows() || empty.size() != users.size()) {
    throw DataError("representations: metadata and values disagree");
  }
  std::vector<UserRepresentation> out;
  out.reserve(users.size());
  for (std::size_t u = 0; u < users.size(); ++u) {
    out.push_back({users[u].get<std::string>(), ck.meta.at("anchors").get<Index>(), ck.meta.at("dim").get<Index>(),
                   empty[u].get<bool>(), values.row(static_cast<Index>(u)).transpose()});
  }
  return out;
}

}  // namespace lurm
