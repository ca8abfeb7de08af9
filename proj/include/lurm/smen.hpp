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


#pragma once

#include "lurm/checkpoint.hpp"
#include "lurm/core/numerics.hpp"
#include "lurm/interest_vocab.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lurm {

struct SmenConfig {
  Index clusters = 500;  // D
  Index anchors = 10;    // M
  Index dim = 128;       // H
  Real tau = Real(0.1);
  std::size_t scales = 2;       // 1 = fine scale only, 2 = fine + coarse with a gate
  bool vector_gate = false;     // per-coordinate gate instead of one scalar per anchor
  bool per_anchor_gru = false;  // one GRU per anchor instead of a shared one
};

/// Gated recurrent unit, input and hidden size H, zero initial state.
///   r = sigmoid(x Wir' + bir + h Whr' + bhr)
///   z = sigmoid(x Wiz' + biz + h Whz' + bhz)
///   n = tanh(x Win' + bin + r * (h Whn' + bhn))
///   h' = (1 - z) * n + z * h
class Gru {
 public:
  Gru(const std::string& prefix, Index dim, std::mt19937_64& rng);

  Var<Real> step(Tape<Real>& tape, const Var<Real>& x, const Var<Real>& h);
  /// `steps[t]` holds the inputs of the streams still active at step t; the
  /// active streams are always a prefix, so row counts never increase. Returns
  /// the last hidden state of every stream (rows of steps[0]).
  Var<Real> run(Tape<Real>& tape, const std::vector<Var<Real>>& steps);

  std::vector<Parameter<Real>*> parameters();
  Parameter<Real>& get(const std::string& short_name);

 private:
  Index dim_;
  std::vector<Parameter<Real>> p_;  // wir wiz win whr whz whn bir biz bin bhr bhz bhn
};

/// One behavior sequence at every scale, finest first.
struct SmenView {
  std::vector<std::vector<SparseVector>> scales;
};

class SmenModel {
 public:
  SmenModel(SmenConfig config, std::uint64_t seed);

  const SmenConfig& config() const { return config_; }
  Index output_dim() const { return config_.anchors * config_.dim; }

  /// Anchor representations of each vector in `bs`; row b*M + i is anchor i of bs[b].
  Var<Real> multi_anchor(Tape<Real>& tape, std::span<const SparseVector* const> bs);
  /// Attention weights for the given interest ids, one row per interest (u x M).
  MatR attention(std::span<const Index> interests) const;
  MatR anchor_logits(std::span<const Index> interests) const;

  /// Final GRU state per view and anchor for one scale; rows v*M + i.
  Var<Real> aggregate_time(Tape<Real>& tape, const std::vector<const std::vector<SparseVector>*>& sequences);
  /// Gated combination of fine and coarse anchor states, both (V*M) x H.
  Var<Real> fuse(Tape<Real>& tape, const Var<Real>& fine, const Var<Real>& coarse);
  /// Per-anchor gate values, (V*M) x 1 (scalar gate) or (V*M) x H.
  Var<Real> gate(Tape<Real>& tape, const Var<Real>& fine, const Var<Real>& coarse);
  /// Projection used only by the contrastive objective; V x (M*H), not normalized.
  Var<Real> head(Tape<Real>& tape, const Var<Real>& anchors);

  /// Final representations, (V*M) x H.
  Var<Real> represent(Tape<Real>& tape, std::span<const SmenView> views);
  /// Contrastive loss over views ordered (x1, y1, x2, y2, ...).
  Var<Real> loss(Tape<Real>& tape, std::span<const SmenView> views);

  /// Inference-only forward pass; row v is the M*H concatenation for views[v].
  MatR infer(std::span<const SmenView> views);

  /// Precomputes attention for all D interests; used when gradients are off.
  void enable_attention_cache();

  std::vector<Parameter<Real>*> parameters();
  Parameter<Real>& parameter(const std::string& name);
  Gru& gru(std::size_t anchor = 0) { return grus_[config_.per_anchor_gru ? anchor : 0]; }

  Checkpoint to_checkpoint() const;
  static SmenModel from_checkpoint(const Checkpoint& ck);

 private:
  SmenModel() = default;
  Parameter<Real>& add_parameter(std::string name, MatR value);
  CooMatrix<Real> anchor_selector(Index views, Index anchor) const;

  SmenConfig config_;
  std::vector<Parameter<Real>> params_;  // stable storage, never resized after construction
  std::vector<Gru> grus_;
  std::optional<MatR> attention_cache_;
};

// --- views and training -----------------------------------------------------------------

/// Inclusive range of fine-scale period indices.
struct PeriodRange {
  std::size_t first = 0;
  std::size_t last = 0;
  friend bool operator==(const PeriodRange&, const PeriodRange&) = default;
};

/// Two continuous sub-ranges, each starting and ending on a nonempty period,
/// such that neither view's nonempty periods contain the other's. Returns
/// nothing for fewer than two nonempty periods.
std::optional<std::pair<PeriodRange, PeriodRange>> sample_view_ranges(std::span<const SparseVector> fine,
                                                                      std::mt19937_64& rng);

SmenView make_view(const UserBoI& user, PeriodRange range, std::span<const TimePartition> partitions, bool integral);
/// The user's history from the first to the last nonempty fine period, the
/// same shape as a training view. Throws when every period is empty.
SmenView history_view(const UserBoI& user, std::span<const TimePartition> partitions, bool integral);

struct SmenTrainConfig {
  SmenConfig model{};
  Real lr = Real(1e-3);
  std::size_t batch = 256;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
};

struct SmenTrainResult {
  SmenModel model;
  std::vector<Real> step_losses;
  std::vector<Real> epoch_losses;
};

/// Trains on the given users of the store (all users when `users` is empty).
SmenTrainResult train_smen(const BoIStore& store, const SmenTrainConfig& config,
                           std::span<const std::size_t> users = {});

struct UserRepresentation {
  std::string user_id;
  Index anchors = 0;
  Index dim = 0;
  bool empty = false;  // no in-window behavior; values are all zero
  VecR values;
};

UserRepresentation infer_representation(const std::vector<BehaviorEvent>& events, const ItemEncoder& encoder,
                                        const InterestVocabulary& vocab, SmenModel& model,
                                        std::span<const Granularity> granularities, TimeRange window);

/// Batched inference for many users; users without nonempty periods get the empty flag.
std::vector<UserRepresentation> infer_representations(SmenModel& model, std::span<const UserBoI> users,
                                                      std::span<const TimePartition> partitions, bool integral,
                                                      std::size_t batch = 256);

/// Representations as a checkpoint: tensor "values" holds one row per user,
/// metadata lists user ids and empty flags in row order.
Checkpoint representations_to_checkpoint(std::span<const UserRepresentation> reps);
std::vector<UserRepresentation> representations_from_checkpoint(const Checkpoint& ck);

}  // namespace lurm
