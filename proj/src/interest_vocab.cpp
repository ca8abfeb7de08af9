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


#include "lurm/interest_vocab.hpp"

#include "lurm/errors.hpp"
#include "lurm/hashing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace lurm {

std::string_view to_string(AssignmentMode m) { return m == AssignmentMode::kHard ? "hard" : "soft"; }

AssignmentMode assignment_mode_from_string(std::string_view s) {
  if (s == "hard") return AssignmentMode::kHard;
  if (s == "soft") return AssignmentMode::kSoft;
  throw UsageError("unknown assignment mode '" + std::string(s) + "'");
}

namespace {

constexpr Index kScoreChunk = 4096;

void check_unit_rows(const MatR& m, Real tol, const char* what) {
  for (Index r = 0; r < m.rows(); ++r) {
    const Real n = m.row(r).norm();
    if (!std::isfinite(n) || std::abs(n - Real(1)) > tol) {
      throw std::invalid_argument(std::string(what) + ": row " + std::to_string(r) + " has norm " + std::to_string(n));
    }
  }
}

// Argmax with lowest-index tie-break.
Index argmax(std::span<const Real> s) {
  Index best = 0;
  for (std::size_t j = 1; j < s.size(); ++j) {
    if (s[j] > s[static_cast<std::size_t>(best)]) best = static_cast<Index>(j);
  }
  return best;
}

}  // namespace

InterestVocabulary::InterestVocabulary(MatR centroids, AssignmentMode mode, SoftAssignmentConfig soft)
    : centroids_(std::move(centroids)), mode_(mode), soft_(soft) {
  if (centroids_.rows() < 2) throw std::invalid_argument("InterestVocabulary: need at least 2 centroids");
  if (!centroids_.allFinite()) throw std::invalid_argument("InterestVocabulary: non-finite centroid");
  check_unit_rows(centroids_, Real(1e-6), "InterestVocabulary");
  if (soft_.top_k < 1) throw std::invalid_argument("InterestVocabulary: top_k must be >= 1");
  if (!(soft_.temperature > 0)) throw std::invalid_argument("InterestVocabulary: temperature must be positive");
}

Assignment InterestVocabulary::from_scores(std::span<const Real> scores) const {
  if (mode_ == AssignmentMode::kHard) return {{argmax(scores), Real(1)}};
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(soft_.top_k), scores.size());
  std::vector<Index> order(scores.size());
  std::iota(order.begin(), order.end(), Index(0));
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), [&](Index a, Index b) {
    const Real sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
    return sa > sb || (sa == sb && a < b);
  });
  std::vector<Real> logits(k);
  for (std::size_t i = 0; i < k; ++i) logits[i] = scores[static_cast<std::size_t>(order[i])] / soft_.temperature;
  const VecR w = softmax_stable<Real>(logits);
  Assignment out;
  for (std::size_t i = 0; i < k; ++i) out.emplace_back(order[i], w(static_cast<Index>(i)));
  std::sort(out.begin(), out.end());
  return out;
}

Index InterestVocabulary::assign_hard(const Eigen::Ref<const VecR>& e) const {
  if (e.size() != dim()) throw ShapeError("assign: embedding of size " + std::to_string(e.size()) +
                                          " for vocabulary of dim " + std::to_string(dim()));
  const VecR s = centroids_ * e;
  return argmax(std::span<const Real>(s.data(), static_cast<std::size_t>(s.size())));
}

Assignment InterestVocabulary::assign_soft(const Eigen::Ref<const VecR>& e) const {
  InterestVocabulary soft = *this;
  soft.mode_ = AssignmentMode::kSoft;
  return soft.assign(e);
}

Assignment InterestVocabulary::assign(const Eigen::Ref<const VecR>& e) const {
  if (e.size() != dim()) throw ShapeError("assign: embedding of size " + std::to_string(e.size()) +
                                          " for vocabulary of dim " + std::to_string(dim()));
  const VecR s = centroids_ * e;
  return from_scores(std::span<const Real>(s.data(), static_cast<std::size_t>(s.size())));
}

std::vector<Assignment> InterestVocabulary::assign_rows(const MatR& embeddings) const {
  if (embeddings.cols() != dim()) {
    throw ShapeError("assign_rows: embeddings " + shape_string(embeddings.rows(), embeddings.cols()) +
                     " for vocabulary of dim " + std::to_string(dim()));
  }
  std::vector<Assignment> out;
  out.reserve(static_cast<std::size_t>(embeddings.rows()));
  for (Index start = 0; start < embeddings.rows(); start += kScoreChunk) {
    const Index n = std::min(kScoreChunk, embeddings.rows() - start);
    const MatR s = embeddings.middleRows(start, n) * centroids_.transpose();
    for (Index r = 0; r < n; ++r) {
      out.push_back(from_scores(std::span<const Real>(s.row(r).data(), static_cast<std::size_t>(s.cols()))));
    }
  }
  return out;
}

Checkpoint InterestVocabulary::to_checkpoint() const {
  Checkpoint ck;
  ck.meta["kind"] = "interest_vocabulary";
  ck.meta["clusters"] = size();
  ck.meta["mode"] = std::string(to_string(mode_));
  ck.meta["soft_top_k"] = soft_.top_k;
  ck.meta["soft_temperature"] = soft_.temperature;
  ck.put("centroids", centroids_);
  return ck;
}

InterestVocabulary InterestVocabulary::from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "interest_vocabulary") throw DataError("checkpoint is not an interest vocabulary");
  SoftAssignmentConfig soft{ck.meta.at("soft_top_k").get<Index>(), ck.meta.at("soft_temperature").get<Real>()};
  try {
    return InterestVocabulary(ck.tensor("centroids"), assignment_mode_from_string(ck.meta.at("mode").get<std::string>()),
                              soft);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("invalid vocabulary checkpoint: ") + e.what());
  }
}

// --- clustering ---------------------------------------------------------------------------

namespace {

struct Assigned {
  std::vector<Index> label;
  std::vector<Real> cosine;
  Real objective = 0;
};

Assigned assign_all(const MatR& x, const MatR& c) {
  Assigned a;
  a.label.resize(static_cast<std::size_t>(x.rows()));
  a.cosine.resize(static_cast<std::size_t>(x.rows()));
  double total = 0;
  for (Index start = 0; start < x.rows(); start += kScoreChunk) {
    const Index n = std::min(kScoreChunk, x.rows() - start);
    const MatR s = x.middleRows(start, n) * c.transpose();
    for (Index r = 0; r < n; ++r) {
      const Index j = argmax(std::span<const Real>(s.row(r).data(), static_cast<std::size_t>(s.cols())));
      a.label[static_cast<std::size_t>(start + r)] = j;
      a.cosine[static_cast<std::size_t>(start + r)] = s(r, j);
      total += s(r, j);
    }
  }
  a.objective = static_cast<Real>(total / static_cast<double>(x.rows()));
  return a;
}

// k-means++ seeding with squared chord distance 2 - 2cos.
MatR seed_plus_plus(const MatR& x, Index k, std::mt19937_64& rng) {
  const Index n = x.rows();
  MatR c(k, x.cols());
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  std::uniform_int_distribution<Index> first(0, n - 1);
  Index pick = first(rng);
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (Index j = 0; j < k; ++j) {
    c.row(j) = x.row(pick);
    taken[static_cast<std::size_t>(pick)] = 1;
    if (j + 1 == k) break;
    const VecR s = x * x.row(pick).transpose();
    double total = 0;
    for (Index i = 0; i < n; ++i) {
      auto& d = d2[static_cast<std::size_t>(i)];
      d = std::min(d, std::max(0.0, 2.0 - 2.0 * static_cast<double>(s(i))));
      if (taken[static_cast<std::size_t>(i)]) d = 0;
      total += d;
    }
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      const double target = u(rng);
      double acc = 0;
      pick = -1;
      for (Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (d2[static_cast<std::size_t>(i)] > 0 && acc >= target) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {
        for (Index i = n - 1; i >= 0; --i) {
          if (d2[static_cast<std::size_t>(i)] > 0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      // every remaining point coincides with a chosen centroid
      std::vector<Index> free;
      for (Index i = 0; i < n; ++i) {
        if (!taken[static_cast<std::size_t>(i)]) free.push_back(i);
      }
      std::uniform_int_distribution<std::size_t> any(0, free.size() - 1);
      pick = free[any(rng)];
    }
  }
  return c;
}

void minibatch_warmup(const MatR& x, MatR& c, const VocabFitConfig& cfg, std::mt19937_64& rng) {
  const Index n = x.rows();
  std::vector<double> seen(static_cast<std::size_t>(c.rows()), 0.0);
  std::uniform_int_distribution<Index> pick(0, n - 1);
  MatR batch(static_cast<Index>(cfg.minibatch_size), x.cols());
  for (std::size_t it = 0; it < cfg.minibatch_iters; ++it) {
    for (Index b = 0; b < batch.rows(); ++b) batch.row(b) = x.row(pick(rng));
    const Assigned a = assign_all(batch, c);
    for (Index b = 0; b < batch.rows(); ++b) {
      const Index j = a.label[static_cast<std::size_t>(b)];
      const double eta = 1.0 / ++seen[static_cast<std::size_t>(j)];
      c.row(j) = (1.0 - eta) * c.row(j) + eta * batch.row(b);
      const Real norm = c.row(j).norm();
      if (norm > 0) c.row(j) /= norm;
    }
  }
}

}  // namespace

MatR sample_rows(const MatR& m, std::size_t n, std::uint64_t seed) {
  if (n >= static_cast<std::size_t>(m.rows())) return m;
  std::vector<Index> idx(static_cast<std::size_t>(m.rows()));
  std::iota(idx.begin(), idx.end(), Index(0));
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  MatR out(static_cast<Index>(n), m.cols());
  for (std::size_t i = 0; i < n; ++i) out.row(static_cast<Index>(i)) = m.row(idx[i]);
  return out;
}

VocabFitResult fit_vocabulary(const MatR& x, const VocabFitConfig& cfg) {
  const Index k = cfg.clusters;
  if (k < 2) throw std::invalid_argument("fit_vocabulary: need at least 2 clusters");
  if (x.rows() < k) {
    throw DataError("fit_vocabulary: " + std::to_string(x.rows()) + " embeddings for " + std::to_string(k) +
                    " clusters");
  }
  check_unit_rows(x, Real(1e-4), "fit_vocabulary");

  std::mt19937_64 rng(cfg.seed);
  MatR c = seed_plus_plus(x, k, rng);
  if (cfg.minibatch_iters > 0 && static_cast<std::size_t>(x.rows()) > cfg.minibatch_size) {
    minibatch_warmup(x, c, cfg, rng);
  }

  std::vector<Real> history;
  Assigned a = assign_all(x, c);
  history.push_back(a.objective);
  bool converged = false;
  std::size_t it = 0;
  while (it < cfg.max_iters) {
    ++it;
    MatR next = MatR::Zero(k, x.cols());
    std::vector<Index> members(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < x.rows(); ++i) {
      const Index j = a.label[static_cast<std::size_t>(i)];
      next.row(j) += x.row(i);
      ++members[static_cast<std::size_t>(j)];
    }
    std::vector<char> used(static_cast<std::size_t>(x.rows()), 0);
    for (Index j = 0; j < k; ++j) {
      const Real norm = next.row(j).norm();
      if (members[static_cast<std::size_t>(j)] > 0 && norm > Real(1e-12)) {
        next.row(j) /= norm;
        continue;
      }
      // empty (or degenerate) cluster: move it onto the worst-served point
      Index far = -1;
      for (Index i = 0; i < x.rows(); ++i) {
        if (used[static_cast<std::size_t>(i)]) continue;
        if (far < 0 || a.cosine[static_cast<std::size_t>(i)] < a.cosine[static_cast<std::size_t>(far)]) far = i;
      }
      used[static_cast<std::size_t>(far)] = 1;
      next.row(j) = x.row(far) / x.row(far).norm();
    }
    Assigned b = assign_all(x, next);
    const bool same = b.label == a.label;
    const Real prev = history.back();
    c = std::move(next);
    a = std::move(b);
    history.push_back(a.objective);
    if (same || a.objective - prev <= cfg.tolerance * std::abs(prev)) {
      converged = true;
      break;
    }
  }
  return VocabFitResult{InterestVocabulary(std::move(c), cfg.mode, cfg.soft), std::move(history), it, converged};
}

// --- BoI -------------------------------------------------------------------------------------

void BoIAccumulator::add(const Assignment& a) {
  for (const auto& [j, w] : a) counts_[j] += static_cast<double>(w);
}

void BoIAccumulator::add_counts(const SparseVector& boi, bool integral) {
  for (const auto& [j, c] : counts_from_boi(boi, integral)) counts_[j] += c;
}

SparseVector BoIAccumulator::finish(Index clusters) const { return boi_from_counts(counts_, clusters); }

SparseVector boi_from_counts(const std::map<Index, double>& counts, Index clusters) {
  std::vector<SparseVector::Entry> entries;
  entries.reserve(counts.size());
  for (const auto& [j, c] : counts) {
    if (c > 0) entries.emplace_back(j, static_cast<Real>(std::log1p(c)));
  }
  return SparseVector(clusters, std::move(entries));
}

std::map<Index, double> counts_from_boi(const SparseVector& boi, bool integral) {
  std::map<Index, double> out;
  for (const auto& [j, v] : boi.entries()) {
    const double c = std::expm1(static_cast<double>(v));
    out.emplace(j, integral ? std::round(c) : c);
  }
  return out;
}

SparseVector boi_encode(std::span<const Assignment* const> assignments, Index clusters) {
  BoIAccumulator acc;
  for (const Assignment* a : assignments) acc.add(*a);
  return acc.finish(clusters);
}

namespace {

std::string item_key(const std::vector<std::string>& tokens) {
  std::string key;
  for (const auto& t : tokens) {
    key += t;
    key.push_back('\x1f');
  }
  return key;
}

constexpr std::size_t kEncodeChunk = 2048;

}  // namespace

BoIEncoder::BoIEncoder(const ItemEncoder& encoder, const InterestVocabulary& vocab) : encoder_(encoder), vocab_(vocab) {
  if (encoder.dim() != vocab.dim()) {
    throw DataError("item encoder dimension " + std::to_string(encoder.dim()) + " does not match vocabulary dimension " +
                    std::to_string(vocab.dim()));
  }
}

const Assignment& BoIEncoder::assignment(const std::vector<std::string>& tokens) {
  std::string key = item_key(tokens);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  const VecR e = encoder_.encode_item(tokens);
  return cache_.emplace(std::move(key), vocab_.assign(e)).first->second;
}

std::vector<Assignment> BoIEncoder::assign_items(const ItemTable& items) const {
  std::vector<Assignment> out;
  out.reserve(items.size());
  for (std::size_t start = 0; start < items.size(); start += kEncodeChunk) {
    const std::size_t stop = std::min(items.size(), start + kEncodeChunk);
    std::vector<const std::vector<std::string>*> batch;
    for (std::size_t i = start; i < stop; ++i) batch.push_back(&items.tokens(static_cast<std::uint32_t>(i)));
    auto part = vocab_.assign_rows(encoder_.encode_items(batch));
    for (auto& a : part) out.push_back(std::move(a));
  }
  return out;
}

SparseVector BoIEncoder::encode(const std::vector<BehaviorEvent>& events) {
  BoIAccumulator acc;
  for (const auto& e : events) acc.add(assignment(e.tokens));
  return acc.finish(vocab_.size());
}

SparseVector boi_encode(const std::vector<BehaviorEvent>& events, const InterestVocabulary& vocab,
                        const ItemEncoder& encoder) {
  BoIEncoder enc(encoder, vocab);
  return enc.encode(events);
}

std::size_t UserBoI::nonempty_periods(std::size_t scale) const {
  if (scale >= scales.size()) return 0;
  std::size_t n = 0;
  for (const auto& p : scales[scale].periods) n += !p.empty();
  return n;
}

namespace {

void check_granularities(std::span<const Granularity> g) {
  if (g.empty()) throw std::invalid_argument("at least one granularity is required");
  for (std::size_t i = 1; i < g.size(); ++i) {
    if (static_cast<int>(g[i]) <= static_cast<int>(g[i - 1])) {
      throw std::invalid_argument("granularities must be distinct and ordered finest first");
    }
  }
}

}  // namespace

UserBoI build_boi_sequences(const std::vector<BehaviorEvent>& events, const InterestVocabulary& vocab,
                            const ItemEncoder& encoder, std::span<const Granularity> granularities,
                            TimeRange window) {
  check_granularities(granularities);
  BoIEncoder enc(encoder, vocab);
  UserBoI out;
  out.user_id = events.empty() ? std::string() : events.front().user_id;
  for (Granularity g : granularities) {
    const auto parts = partition_time(events, g, window);
    BoISequence seq{g, {}};
    for (const auto& bucket : parts.buckets) seq.periods.push_back(enc.encode(bucket));
    out.scales.push_back(std::move(seq));
  }
  return out;
}

UserBoI build_user_boi(const std::string& user_id, std::span<const CompactEvent> events,
                       std::span<const Assignment> item_assignments, Index clusters,
                       std::span<const TimePartition> partitions) {
  UserBoI out;
  out.user_id = user_id;
  for (const auto& part : partitions) {
    std::vector<BoIAccumulator> acc(part.size());
    for (const auto& e : events) {
      const long p = part.period_of(e.timestamp);
      if (p < 0) continue;
      acc[static_cast<std::size_t>(p)].add(item_assignments[e.item]);
    }
    BoISequence seq{part.granularity, {}};
    seq.periods.reserve(acc.size());
    for (const auto& a : acc) seq.periods.push_back(a.finish(clusters));
    out.scales.push_back(std::move(seq));
  }
  return out;
}

std::vector<SparseVector> aggregate_scale(std::span<const SparseVector> fine, std::size_t first,
                                          const TimePartition& fine_partition, const TimePartition& coarse_partition,
                                          bool integral, std::size_t* coarse_first) {
  if (fine.empty()) throw std::invalid_argument("aggregate_scale: empty range");
  if (first + fine.size() > fine_partition.size()) throw std::out_of_range("aggregate_scale: range outside partition");
  const Index clusters = fine.front().dim();
  const long c0 = coarse_partition.period_of(fine_partition.periods[first].start);
  const long c1 = coarse_partition.period_of(fine_partition.periods[first + fine.size() - 1].start);
  if (c0 < 0 || c1 < 0) throw std::invalid_argument("aggregate_scale: partitions do not share a window");
  std::vector<BoIAccumulator> acc(static_cast<std::size_t>(c1 - c0 + 1));
  for (std::size_t i = 0; i < fine.size(); ++i) {
    const long c = coarse_partition.period_of(fine_partition.periods[first + i].start);
    if (coarse_partition.period_of(fine_partition.periods[first + i].end - 1) != c) {
      throw std::invalid_argument("aggregate_scale: fine periods do not nest in coarse periods");
    }
    acc[static_cast<std::size_t>(c - c0)].add_counts(fine[i], integral);
  }
  std::vector<SparseVector> out;
  for (const auto& a : acc) out.push_back(a.finish(clusters));
  if (coarse_first) *coarse_first = static_cast<std::size_t>(c0);
  return out;
}

SparseVector collapse(std::span<const SparseVector> periods, Index clusters, bool integral) {
  BoIAccumulator acc;
  for (const auto& p : periods) acc.add_counts(p, integral);
  return acc.finish(clusters);
}

// --- store ------------------------------------------------------------------------------------

std::vector<TimePartition> BoIStore::partitions() const {
  std::vector<TimePartition> out;
  for (Granularity g : granularities) out.push_back(make_partition(g, window));
  return out;
}

long BoIStore::find(std::string_view user_id) const {
  auto it = std::lower_bound(users.begin(), users.end(), user_id,
                             [](const UserBoI& u, std::string_view id) { return u.user_id < id; });
  if (it == users.end() || it->user_id != user_id) return -1;
  return static_cast<long>(it - users.begin());
}

namespace {

constexpr std::string_view kStoreMagic = "#lurm-boi";

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_boi_store(const std::filesystem::path& path, const BoIStore& store) {
  nlohmann::ordered_json header;
  header["version"] = 1;
  header["clusters"] = store.clusters;
  header["window"] = {format_date(store.window.start), format_date(store.window.end)};
  std::vector<std::string> grans;
  for (Granularity g : store.granularities) grans.emplace_back(to_string(g));
  header["granularities"] = grans;
  header["mode"] = std::string(to_string(store.mode));
  header["users"] = store.users.size();

  std::string out;
  out += std::string(kStoreMagic) + "\t" + header.dump() + "\n";
  for (const auto& u : store.users) {
    bool any = false;
    for (const auto& seq : u.scales) {
      for (const auto& v : seq.periods) any = any || !v.empty();
    }
    if (!any) {
      out += u.user_id + "\t*\t*\t\n";  // user without in-window behavior
      continue;
    }
    for (const auto& seq : u.scales) {
      for (std::size_t p = 0; p < seq.periods.size(); ++p) {
        const auto& v = seq.periods[p];
        if (v.empty()) continue;
        out += u.user_id;
        out += '\t';
        out += to_string(seq.granularity);
        out += '\t';
        out += std::to_string(p);
        out += '\t';
        bool first = true;
        for (const auto& [j, x] : v.entries()) {
          if (!first) out += ' ';
          first = false;
          out += std::to_string(j);
          out += ':';
          out += format_value(x);
        }
        out += '\n';
      }
    }
  }
  write_file_atomic(path, out);
}

BoIStore read_boi_store(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read BoI store " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind(kStoreMagic, 0) != 0) {
    throw DataError("BoI store " + path.string() + ": missing header");
  }
  BoIStore store;
  std::map<std::string, std::size_t> slot_of;
  std::size_t declared_users = 0;
  try {
    const auto header = nlohmann::json::parse(line.substr(kStoreMagic.size() + 1));
    store.clusters = header.at("clusters").get<Index>();
    const auto w = header.at("window");
    store.window = {parse_date(w.at(0).get<std::string>()), parse_date(w.at(1).get<std::string>())};
    for (const auto& g : header.at("granularities")) store.granularities.push_back(granularity_from_string(g.get<std::string>()));
    store.mode = assignment_mode_from_string(header.at("mode").get<std::string>());
    declared_users = header.at("users").get<std::size_t>();
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("BoI store " + path.string() + ": bad header: " + e.what());
  }
  const auto parts = store.partitions();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      return DataError("BoI store " + path.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    std::istringstream fields(line);
    std::string uid, gran, period, entries;
    if (!std::getline(fields, uid, '\t') || !std::getline(fields, gran, '\t') || !std::getline(fields, period, '\t')) {
      throw fail("expected 4 tab-separated fields");
    }
    std::getline(fields, entries);
    auto [it, fresh] = slot_of.emplace(uid, store.users.size());
    if (fresh) {
      UserBoI u;
      u.user_id = uid;
      for (std::size_t s = 0; s < parts.size(); ++s) {
        u.scales.push_back({store.granularities[s], std::vector<SparseVector>(parts[s].size(), SparseVector(store.clusters))});
      }
      store.users.push_back(std::move(u));
    }
    if (gran == "*") continue;
    std::size_t scale = store.granularities.size();
    for (std::size_t s = 0; s < store.granularities.size(); ++s) {
      if (to_string(store.granularities[s]) == gran) scale = s;
    }
    if (scale == store.granularities.size()) throw fail("unknown granularity '" + gran + "'");
    std::size_t p = 0;
    try {
      p = std::stoul(period);
    } catch (const std::exception&) {
      throw fail("bad period index");
    }
    if (p >= parts[scale].size()) throw fail("period index out of range");
    std::vector<SparseVector::Entry> vals;
    std::istringstream es(entries);
    std::string tok;
    while (es >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw fail("bad entry '" + tok + "'");
      try {
        vals.emplace_back(std::stol(tok.substr(0, colon)), static_cast<Real>(std::stod(tok.substr(colon + 1))));
      } catch (const std::exception&) {
        throw fail("bad entry '" + tok + "'");
      }
    }
    try {
      store.users[it->second].scales[scale].periods[p] = SparseVector(store.clusters, std::move(vals));
    } catch (const std::exception& e) {
      throw fail(e.what());
    }
  }
  if (store.users.size() != declared_users) {
    throw DataError("BoI store " + path.string() + ": header declares " + std::to_string(declared_users) + " users, found " +
                    std::to_string(store.users.size()));
  }
  std::sort(store.users.begin(), store.users.end(),
            [](const UserBoI& a, const UserBoI& b) { return a.user_id < b.user_id; });
  return store;
}

}  // namespace lurm
