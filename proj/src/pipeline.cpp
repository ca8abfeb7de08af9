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


#include "lurm/pipeline.hpp"

#include <algorithm>
#include <numeric>

namespace lurm {

MatR embed_items(const ItemEncoder& encoder, const ItemTable& items, std::size_t chunk) {
  MatR out(static_cast<Index>(items.size()), encoder.dim());
  std::vector<const std::vector<std::string>*> batch;
  for (std::size_t start = 0; start < items.size(); start += chunk) {
    const std::size_t stop = std::min(items.size(), start + chunk);
    batch.clear();
    for (std::size_t i = start; i < stop; ++i) batch.push_back(&items.tokens(static_cast<std::uint32_t>(i)));
    out.middleRows(static_cast<Index>(start), static_cast<Index>(stop - start)) = encoder.encode_items(batch);
  }
  return out;
}

BoIStore encode_corpus(const Corpus& corpus, const ItemEncoder& encoder, const InterestVocabulary& vocab,
                       std::vector<Granularity> granularities, TimeRange window) {
  const BoIEncoder enc(encoder, vocab);
  const auto assignments = enc.assign_items(corpus.items);
  return encode_corpus(corpus, assignments, vocab.size(), vocab.mode(), std::move(granularities), window);
}

BoIStore encode_corpus(const Corpus& corpus, std::span<const Assignment> item_assignments, Index clusters,
                       AssignmentMode mode, std::vector<Granularity> granularities, TimeRange window) {
  BoIStore store;
  store.clusters = clusters;
  store.window = window;
  store.granularities = std::move(granularities);
  store.mode = mode;
  const auto parts = store.partitions();
  std::vector<std::size_t> order(corpus.users.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return corpus.users[a] < corpus.users[b]; });
  store.users.reserve(order.size());
  for (std::size_t u : order) {
    store.users.push_back(build_user_boi(corpus.users[u], corpus.events[u], item_assignments, clusters, parts));
  }
  return store;
}

MatR collapsed_boi_features(const BoIStore& store) {
  MatR x = MatR::Zero(static_cast<Index>(store.users.size()), store.clusters);
  for (std::size_t u = 0; u < store.users.size(); ++u) {
    const auto& fine = store.users[u].scales.at(0).periods;
    const SparseVector all = collapse(fine, store.clusters, store.integral());
    for (const auto& [j, v] : all.entries()) x(static_cast<Index>(u), j) = v;
  }
  return x;
}

BoIStore keep_last_periods(const BoIStore& store, std::size_t fine_periods) {
  BoIStore out = store;
  const auto parts = store.partitions();
  for (auto& user : out.users) {
    auto& fine = user.scales.at(0).periods;
    const std::size_t cut = fine.size() > fine_periods ? fine.size() - fine_periods : 0;
    for (std::size_t p = 0; p < cut; ++p) fine[p] = SparseVector(store.clusters);
    for (std::size_t s = 1; s < user.scales.size(); ++s) {
      user.scales[s].periods = aggregate_scale(fine, 0, parts[0], parts[s], store.integral());
    }
  }
  return out;
}

std::map<std::string, Index> row_index(const std::vector<UserRepresentation>& reps) {
  std::map<std::string, Index> m;
  for (std::size_t i = 0; i < reps.size(); ++i) m.emplace(reps[i].user_id, static_cast<Index>(i));
  return m;
}

std::map<std::string, Index> row_index(const BoIStore& store) {
  std::map<std::string, Index> m;
  for (std::size_t i = 0; i < store.users.size(); ++i) m.emplace(store.users[i].user_id, static_cast<Index>(i));
  return m;
}

MatR stack_values(const std::vector<UserRepresentation>& reps) {
  const Index cols = reps.empty() ? 0 : reps.front().values.size();
  MatR x(static_cast<Index>(reps.size()), cols);
  for (std::size_t i = 0; i < reps.size(); ++i) x.row(static_cast<Index>(i)) = reps[i].values.transpose();
  return x;
}

}  // namespace lurm
