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

#include "lurm/item_embed.hpp"

#include "lurm/errors.hpp"
#include "lurm/hashing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace lurm {

namespace {

MatR uniform_init(Index rows, Index cols, Real bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  MatR m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(dist(rng));
  return m;
}

const char* const kBlockNames[4] = {"w1", "b1", "w2", "b2"};

}  // namespace

ItemEncoder::ItemEncoder(std::vector<std::string> vocabulary, ItemEncoderConfig config, std::uint64_t seed)
    : config_(config) {
  if (config_.dim <= 0) throw std::invalid_argument("ItemEncoder: dimension must be positive");
  if (!(config_.tau > 0)) throw std::invalid_argument("ItemEncoder: tau must be positive");
  vocab_.reserve(vocabulary.size() + 1);
  vocab_.emplace_back();
  for (auto& tok : vocabulary) {
    if (tok.empty() || index_.count(tok)) continue;
    index_.emplace(tok, static_cast<Index>(vocab_.size()));
    vocab_.push_back(std::move(tok));
  }
  std::mt19937_64 rng(seed);
  const Index h = config_.dim;
  const Real bound = Real(1) / std::sqrt(static_cast<Real>(h));
  words_ = Parameter<Real>("words", uniform_init(static_cast<Index>(vocab_.size()), h, bound, rng));
  for (int b = 0; b < 2; ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    blocks_.emplace_back(prefix + "w1", uniform_init(h, h, bound, rng));
    blocks_.emplace_back(prefix + "b1", MatR::Zero(1, h));
    blocks_.emplace_back(prefix + "w2", uniform_init(h, h, bound, rng));
    blocks_.emplace_back(prefix + "b2", MatR::Zero(1, h));
  }
}

Index ItemEncoder::token_row(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? 0 : it->second;
}

Var<Real> ItemEncoder::forward(Tape<Real>& tape, std::span<const std::vector<std::string>* const> items,
                               bool track) const {
  if (items.empty()) throw std::invalid_argument("ItemEncoder: empty batch");
  CooMatrix<Real> averaging(static_cast<Index>(items.size()), words_.value.rows());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& toks = *items[i];
    if (toks.empty()) throw std::invalid_argument("ItemEncoder: item with no tokens");
    const Real w = Real(1) / static_cast<Real>(toks.size());
    for (const auto& t : toks) averaging.add(static_cast<Index>(i), token_row(t), w);
  }
  auto leaf = [&](Parameter<Real>& p) { return track ? tape.parameter(p) : tape.constant(p.value); };
  Var<Real> u = sparse_dense_matmul(averaging, leaf(words_));
  for (int b = 0; b < 2; ++b) {
    auto* blk = &blocks_[static_cast<std::size_t>(4 * b)];
    Var<Real> hidden = relu(add(matmul_transposed(u, leaf(blk[0])), leaf(blk[1])));
    u = add(add(u, matmul_transposed(hidden, leaf(blk[2]))), leaf(blk[3]));
  }
  return l2_normalize_rows(u);
}

Var<Real> ItemEncoder::encode(Tape<Real>& tape, std::span<const std::vector<std::string>* const> items) {
  return forward(tape, items, true);
}

MatR ItemEncoder::encode_items(std::span<const std::vector<std::string>* const> items) const {
  Tape<Real> tape(false);
  return forward(tape, items, false).value();
}

VecR ItemEncoder::encode_item(const std::vector<std::string>& tokens) const {
  if (tokens.empty()) throw std::invalid_argument("encode_item: empty token list");
  const std::vector<std::string>* one[] = {&tokens};
  return encode_items(one).row(0).transpose();
}

std::vector<Parameter<Real>*> ItemEncoder::parameters() {
  std::vector<Parameter<Real>*> out{&words_};
  for (auto& p : blocks_) out.push_back(&p);
  return out;
}

Checkpoint ItemEncoder::to_checkpoint() const {
  Checkpoint ck;
  ck.meta["kind"] = "item_encoder";
  ck.meta["dim"] = config_.dim;
  ck.meta["tau"] = config_.tau;
  ck.meta["beta_seconds"] = config_.beta_seconds;
  ck.meta["vocabulary"] = std::vector<std::string>(vocab_.begin() + 1, vocab_.end());
  ck.put(words_.name, words_.value);
  for (const auto& p : blocks_) ck.put(p.name, p.value);
  return ck;
}

ItemEncoder ItemEncoder::from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "item_encoder") throw DataError("checkpoint is not an item encoder");
  ItemEncoder enc;
  enc.config_.dim = ck.meta.at("dim").get<Index>();
  enc.config_.tau = ck.meta.at("tau").get<Real>();
  enc.config_.beta_seconds = ck.meta.at("beta_seconds").get<std::int64_t>();
  enc.vocab_.emplace_back();
  for (const auto& tok : ck.meta.at("vocabulary")) {
    enc.index_.emplace(tok.get<std::string>(), static_cast<Index>(enc.vocab_.size()));
    enc.vocab_.push_back(tok.get<std::string>());
  }
  enc.words_ = Parameter<Real>("words", ck.tensor("words"));
  if (enc.words_.value.rows() != static_cast<Index>(enc.vocab_.size()) || enc.words_.value.cols() != enc.config_.dim) {
    throw DataError("item encoder checkpoint: word table shape does not match vocabulary");
  }
  for (int b = 0; b < 2; ++b) {
    for (const char* n : kBlockNames) {
      const std::string name = "block" + std::to_string(b) + "." + n;
      enc.blocks_.emplace_back(name, ck.tensor(name));
    }
  }
  return enc;
}

std::vector<std::string> build_token_vocabulary(const Corpus& corpus) {
  std::set<std::string> toks;
  for (std::size_t i = 0; i < corpus.items.size(); ++i) {
    for (const auto& t : corpus.items.tokens(static_cast<std::uint32_t>(i))) toks.insert(t);
  }
  return {toks.begin(), toks.end()};
}

// --- positive pairs -------------------------------------------------------------------

namespace {

std::vector<std::uint64_t> pair_prefix(std::span<const std::int64_t> ts, std::int64_t beta) {
  const std::size_t n = ts.size();
  std::vector<std::uint64_t> prefix(n + 1, 0);
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && ts[i] < ts[i - 1]) throw std::invalid_argument("pair sampling: timestamps not sorted");
    j = std::max(j, i + 1);
    while (j < n && ts[j] - ts[i] < beta) ++j;
    prefix[i + 1] = prefix[i] + (j - i - 1);
  }
  return prefix;
}

}  // namespace

std::uint64_t count_admissible_pairs(std::span<const std::int64_t> ts, std::int64_t beta_seconds) {
  return pair_prefix(ts, beta_seconds).back();
}

std::vector<std::pair<std::size_t, std::size_t>> sample_pair_indices(std::span<const std::int64_t> ts,
                                                                     std::int64_t beta_seconds,
                                                                     std::size_t count, std::uint64_t seed) {
  const auto prefix = pair_prefix(ts, beta_seconds);
  const std::uint64_t total = prefix.back();
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (total == 0 || count == 0) return out;
  const std::uint64_t k = std::min<std::uint64_t>(count, total);
  // Floyd's algorithm: k distinct ranks out of [0, total).
  std::mt19937_64 rng(seed);
  std::set<std::uint64_t> ranks;
  for (std::uint64_t j = total - k; j < total; ++j) {
    std::uniform_int_distribution<std::uint64_t> dist(0, j);
    const std::uint64_t r = dist(rng);
    if (!ranks.insert(r).second) ranks.insert(j);
  }
  out.reserve(ranks.size());
  for (std::uint64_t r : ranks) {
    const auto it = std::upper_bound(prefix.begin(), prefix.end(), r);
    const auto i = static_cast<std::size_t>(std::distance(prefix.begin(), it) - 1);
    out.emplace_back(i, i + 1 + static_cast<std::size_t>(r - prefix[i]));
  }
  return out;
}

std::vector<PositivePair> sample_positive_pairs(const std::vector<BehaviorEvent>& events,
                                                std::int64_t beta_seconds, std::uint64_t seed,
                                                std::size_t count) {
  std::vector<std::int64_t> ts;
  ts.reserve(events.size());
  for (const auto& e : events) {
    if (!events.empty() && e.user_id != events.front().user_id) {
      throw std::invalid_argument("sample_positive_pairs: events from more than one user");
    }
    ts.push_back(e.timestamp);
  }
  std::vector<PositivePair> out;
  for (const auto& [i, j] : sample_pair_indices(ts, beta_seconds, count, seed)) {
    out.push_back({events[i], events[j], events[i].user_id});
  }
  return out;
}

// --- contrastive loss -------------------------------------------------------------------

Var<Real> info_nce_loss(const Var<Real>& embeddings, Real tau) {
  const Index n2 = embeddings.rows();
  if (n2 < 2 || n2 % 2 != 0) {
    throw std::invalid_argument("info_nce_loss: need an even number (>= 2) of rows, got " + std::to_string(n2));
  }
  if (!(tau > 0)) throw std::invalid_argument("info_nce_loss: tau must be positive");
  // An all-zero row is what normalizing a dead (all-ReLU-off) projection gives; it is let through.
  const VecR norms = embeddings.value().rowwise().norm();
  if (((norms.array() - Real(1)).abs() > Real(1e-4) && norms.array() != Real(0)).any()) {
    throw std::invalid_argument("info_nce_loss: rows must be unit norm or zero");
  }
  Tape<Real>& tape = embeddings.tape();
  const Real inv_tau = Real(1) / tau;

  MatR off_diagonal = MatR::Ones(n2, n2);
  off_diagonal.diagonal().setZero();
  MatR partner = MatR::Zero(n2, n2);
  for (Index i = 0; i < n2; i += 2) {
    partner(i, i + 1) = 1;
    partner(i + 1, i) = 1;
  }

  // Cosines are bounded by 1, so subtracting 1/tau keeps every exponent <= 0.
  Var<Real> logits = scale(matmul_transposed(embeddings, embeddings), inv_tau);
  Var<Real> shifted = exp(add_scalar(logits, -inv_tau));
  Var<Real> denom = matmul(mul(shifted, tape.constant(std::move(off_diagonal))), tape.constant(MatR::Ones(n2, 1)));
  Var<Real> positives = sum(mul(logits, tape.constant(std::move(partner))));
  Var<Real> total = sub(sum(log(denom)), positives);
  return add_scalar(scale(total, Real(1) / static_cast<Real>(n2)), inv_tau);
}

// --- training ---------------------------------------------------------------------------

ItemTrainResult train_item_encoder(const Corpus& corpus, const ItemTrainConfig& config) {
  if (config.batch < 2) throw std::invalid_argument("train_item_encoder: batch must be >= 2");
  const std::int64_t beta = config.encoder.beta_seconds;

  std::vector<std::size_t> eligible;
  std::vector<std::vector<std::int64_t>> stamps(corpus.users.size());
  for (std::size_t u = 0; u < corpus.users.size(); ++u) {
    auto& ts = stamps[u];
    ts.reserve(corpus.events[u].size());
    for (const auto& e : corpus.events[u]) ts.push_back(e.timestamp);
    if (count_admissible_pairs(ts, beta) > 0) eligible.push_back(u);
  }
  if (eligible.size() < 2) {
    throw DataError("train_item_encoder: " + std::to_string(eligible.size()) +
                    " user(s) with an admissible positive pair; need at least 2 (beta = " +
                    std::to_string(beta) + " s)");
  }

  ItemTrainResult result{ItemEncoder(build_token_vocabulary(corpus), config.encoder, derive_seed(config.seed, "init")),
                         {}, {}};
  ItemEncoder& enc = result.encoder;
  Adam<Real> adam(enc.parameters(), {.lr = config.lr});
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
      std::vector<const std::vector<std::string>*> batch;
      batch.reserve(2 * (stop - start));
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t u = order[k];
        const auto pairs = sample_pair_indices(stamps[u], beta, 1, derive_seed(epoch_seed, corpus.users[u]));
        const auto [i, j] = pairs.front();
        batch.push_back(&corpus.items.tokens(corpus.events[u][i].item));
        batch.push_back(&corpus.items.tokens(corpus.events[u][j].item));
      }
      tape.reset();
      Var<Real> z = enc.encode(tape, batch);
      Var<Real> loss = info_nce_loss(z, enc.config().tau);
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

}  // namespace lurm
