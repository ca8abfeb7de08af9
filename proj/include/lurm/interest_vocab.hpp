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
#include "lurm/item_embed.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace lurm {

enum class AssignmentMode { kHard, kSoft };

std::string_view to_string(AssignmentMode m);
AssignmentMode assignment_mode_from_string(std::string_view s);

struct SoftAssignmentConfig {
  Index top_k = 3;
  Real temperature = Real(0.1);
};

/// (cluster id, weight) pairs. Hard assignment is a single entry of weight 1.
using Assignment = std::vector<std::pair<Index, Real>>;

class InterestVocabulary {
 public:
  /// Rows of `centroids` must be unit norm; D >= 2.
  explicit InterestVocabulary(MatR centroids, AssignmentMode mode = AssignmentMode::kHard,
                              SoftAssignmentConfig soft = {});

  Index size() const { return centroids_.rows(); }
  Index dim() const { return centroids_.cols(); }
  const MatR& centroids() const { return centroids_; }
  AssignmentMode mode() const { return mode_; }
  const SoftAssignmentConfig& soft_config() const { return soft_; }

  /// Nearest centroid by cosine; ties go to the lowest id.
  Index assign_hard(const Eigen::Ref<const VecR>& e) const;
  /// Top-k centroids weighted by softmax(cos / temperature).
  Assignment assign_soft(const Eigen::Ref<const VecR>& e) const;
  Assignment assign(const Eigen::Ref<const VecR>& e) const;
  /// Assignment for every row of `embeddings`.
  std::vector<Assignment> assign_rows(const MatR& embeddings) const;

  Checkpoint to_checkpoint() const;
  static InterestVocabulary from_checkpoint(const Checkpoint& ck);

 private:
  Assignment from_scores(std::span<const Real> scores) const;

  MatR centroids_;
  AssignmentMode mode_;
  SoftAssignmentConfig soft_;
};

struct VocabFitConfig {
  Index clusters = 500;
  std::size_t max_iters = 100;
  std::size_t minibatch_iters = 20;  // warm-up passes, only used when the sample exceeds one batch
  std::size_t minibatch_size = 1024;
  Real tolerance = Real(1e-6);
  std::uint64_t seed = 1;
  AssignmentMode mode = AssignmentMode::kHard;
  SoftAssignmentConfig soft{};
};

struct VocabFitResult {
  InterestVocabulary vocabulary;
  std::vector<Real> objective;  // mean cosine to the assigned centroid, one entry per refinement pass
  std::size_t iterations = 0;
  bool converged = false;
};

/// Spherical k-means over unit-norm rows. Throws DataError when there are
/// fewer rows than clusters.
VocabFitResult fit_vocabulary(const MatR& embeddings, const VocabFitConfig& config);

/// Uniform row sample without replacement; returns all rows (in order) when n >= rows.
MatR sample_rows(const MatR& m, std::size_t n, std::uint64_t seed);

/// Items drawn for clustering when no explicit size is configured: 50 per cluster.
inline std::size_t default_sample_size(Index clusters) { return 50 * static_cast<std::size_t>(clusters); }

// --- BoI encoding ---------------------------------------------------------------------

/// Per-cluster counts for one slice of behavior. Memory is proportional to the
/// number of distinct clusters touched.
class BoIAccumulator {
 public:
  void add(const Assignment& a);
  void add_counts(const SparseVector& boi, bool integral);
  SparseVector finish(Index clusters) const;
  const std::map<Index, double>& counts() const { return counts_; }
  std::size_t nnz() const { return counts_.size(); }
  void clear() { counts_.clear(); }

 private:
  std::map<Index, double> counts_;
};

/// log(1 + count) per nonzero cluster.
SparseVector boi_from_counts(const std::map<Index, double>& counts, Index clusters);
/// Inverse of boi_from_counts; rounds to integers when `integral`.
std::map<Index, double> counts_from_boi(const SparseVector& boi, bool integral);

SparseVector boi_encode(std::span<const Assignment* const> assignments, Index clusters);

/// Item encoding and assignment with a per-item cache keyed on content.
class BoIEncoder {
 public:
  BoIEncoder(const ItemEncoder& encoder, const InterestVocabulary& vocab);

  const Assignment& assignment(const std::vector<std::string>& tokens);
  /// Precomputes assignments for every item of a corpus; row i matches item id i.
  std::vector<Assignment> assign_items(const ItemTable& items) const;
  SparseVector encode(const std::vector<BehaviorEvent>& events);

  const InterestVocabulary& vocabulary() const { return vocab_; }
  std::size_t cache_size() const { return cache_.size(); }

 private:
  const ItemEncoder& encoder_;
  const InterestVocabulary& vocab_;
  std::unordered_map<std::string, Assignment> cache_;
};

SparseVector boi_encode(const std::vector<BehaviorEvent>& events, const InterestVocabulary& vocab,
                        const ItemEncoder& encoder);

struct BoISequence {
  Granularity granularity = Granularity::kMonth;
  std::vector<SparseVector> periods;
};

struct UserBoI {
  std::string user_id;
  std::vector<BoISequence> scales;  // one per granularity, finest first

  std::size_t nonempty_periods(std::size_t scale = 0) const;
};

/// Per-period encoding of one user's history at each granularity.
UserBoI build_boi_sequences(const std::vector<BehaviorEvent>& events, const InterestVocabulary& vocab,
                            const ItemEncoder& encoder, std::span<const Granularity> granularities,
                            TimeRange window);

/// Same, for a corpus user whose item assignments are already known.
UserBoI build_user_boi(const std::string& user_id, std::span<const CompactEvent> events,
                       std::span<const Assignment> item_assignments, Index clusters,
                       std::span<const TimePartition> partitions);

/// Coarse-scale vectors recomputed from fine-scale ones by summing counts.
/// `fine` covers fine periods [first, first + fine.size()).
std::vector<SparseVector> aggregate_scale(std::span<const SparseVector> fine, std::size_t first,
                                          const TimePartition& fine_partition,
                                          const TimePartition& coarse_partition, bool integral,
                                          std::size_t* coarse_first = nullptr);

/// Whole-slice BoI: counts of all periods merged into one vector.
SparseVector collapse(std::span<const SparseVector> periods, Index clusters, bool integral);

struct BoIStore {
  Index clusters = 0;
  TimeRange window;
  std::vector<Granularity> granularities;
  AssignmentMode mode = AssignmentMode::kHard;
  std::vector<UserBoI> users;

  std::vector<TimePartition> partitions() const;
  bool integral() const { return mode == AssignmentMode::kHard; }
  long find(std::string_view user_id) const;
};

/// Text format: one header line then one line per nonempty period,
/// `user_id <TAB> granularity <TAB> period_index <TAB> id:value id:value ...`.
/// A user with no nonempty period is written once as `user_id <TAB> * <TAB> *`.
void write_boi_store(const std::filesystem::path& path, const BoIStore& store);
BoIStore read_boi_store(const std::filesystem::path& path);

}  // namespace lurm
