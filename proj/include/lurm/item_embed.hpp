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
#include "lurm/ingest.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace lurm {

inline constexpr std::int64_t kSecondsPerDay = 86400;

struct ItemEncoderConfig {
  Index dim = 128;                                // H, also the word embedding size
  Real tau = Real(0.1);                           // contrastive temperature
  std::int64_t beta_seconds = 5 * kSecondsPerDay;  // positive-pair window
};

/// Averaged word embeddings followed by two residual blocks and an L2
/// normalization layer. Row 0 of the word table is the shared
/// out-of-vocabulary row.
class ItemEncoder {
 public:
  ItemEncoder(std::vector<std::string> vocabulary, ItemEncoderConfig config, std::uint64_t seed);

  const ItemEncoderConfig& config() const { return config_; }
  Index dim() const { return config_.dim; }
  std::size_t vocabulary_size() const { return vocab_.size(); }
  Index token_row(const std::string& token) const;

  /// Differentiable encoding of a batch of token lists (n x H, rows unit norm).
  Var<Real> encode(Tape<Real>& tape, std::span<const std::vector<std::string>* const> items);

  /// Inference for one item. Throws std::invalid_argument on empty tokens.
  VecR encode_item(const std::vector<std::string>& tokens) const;
  /// Batched inference; row i encodes items[i].
  MatR encode_items(std::span<const std::vector<std::string>* const> items) const;

  std::vector<Parameter<Real>*> parameters();

  Checkpoint to_checkpoint() const;
  static ItemEncoder from_checkpoint(const Checkpoint& ck);

 private:
  ItemEncoder() = default;
  Var<Real> forward(Tape<Real>& tape, std::span<const std::vector<std::string>* const> items,
                    bool track) const;

  ItemEncoderConfig config_;
  std::vector<std::string> vocab_;  // vocab_[0] is the OOV placeholder ""
  std::unordered_map<std::string, Index> index_;
  mutable Parameter<Real> words_;
  mutable std::vector<Parameter<Real>> blocks_;  // w1, b1, w2, b2 for each of the two blocks
};

/// Sorted distinct tokens of every item in the corpus.
std::vector<std::string> build_token_vocabulary(const Corpus& corpus);

// --- positive pairs -------------------------------------------------------------------

struct PositivePair {
  BehaviorEvent x;
  BehaviorEvent y;
  std::string user_id;
};

/// Number of index pairs i < j with ts[j] - ts[i] < beta (ts sorted ascending).
std::uint64_t count_admissible_pairs(std::span<const std::int64_t> ts, std::int64_t beta_seconds);

/// Uniformly samples up to `count` distinct admissible index pairs without
/// replacement. Returned pairs are ordered by (i, j).
std::vector<std::pair<std::size_t, std::size_t>> sample_pair_indices(std::span<const std::int64_t> ts,
                                                                     std::int64_t beta_seconds,
                                                                     std::size_t count, std::uint64_t seed);

/// Event-level wrapper over sample_pair_indices. `events` must be sorted by
/// timestamp and belong to one user.
std::vector<PositivePair> sample_positive_pairs(const std::vector<BehaviorEvent>& events,
                                                std::int64_t beta_seconds, std::uint64_t seed,
                                                std::size_t count = 1);

// --- contrastive loss -------------------------------------------------------------------

/// Symmetric InfoNCE over rows arranged (x1, y1, x2, y2, ...). Rows must be
/// unit norm (deviation <= 1e-4). Each row's positive is its partner; every
/// other row except itself is in the denominator. Returns the mean over the
/// 2n directed losses.
Var<Real> info_nce_loss(const Var<Real>& embeddings, Real tau);

// --- training ---------------------------------------------------------------------------

struct ItemTrainConfig {
  ItemEncoderConfig encoder{};
  Real lr = Real(1e-3);
  std::size_t batch = 256;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
};

struct ItemTrainResult {
  ItemEncoder encoder;
  std::vector<Real> step_losses;
  std::vector<Real> epoch_losses;
};

/// Contrastive training: every epoch each eligible user contributes one
/// freshly sampled positive pair; pairs are grouped into batches of `batch`
/// users. Throws DataError when fewer than two users have an admissible pair.
ItemTrainResult train_item_encoder(const Corpus& corpus, const ItemTrainConfig& config);

}  // namespace lurm
