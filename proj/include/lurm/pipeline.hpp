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

#include "lurm/interest_vocab.hpp"
#include "lurm/item_embed.hpp"
#include "lurm/smen.hpp"

#include <map>
#include <string>
#include <vector>

namespace lurm {

/// Unit-norm embedding of every item of the table; row i is item id i.
MatR embed_items(const ItemEncoder& encoder, const ItemTable& items, std::size_t chunk = 4096);

/// Per-period BoI sequences for every corpus user, sorted by user id.
BoIStore encode_corpus(const Corpus& corpus, const ItemEncoder& encoder, const InterestVocabulary& vocab,
                       std::vector<Granularity> granularities, TimeRange window);

/// Same, from item assignments computed beforehand (row i is item id i).
BoIStore encode_corpus(const Corpus& corpus, std::span<const Assignment> item_assignments, Index clusters,
                       AssignmentMode mode, std::vector<Granularity> granularities, TimeRange window);

/// One dense row per store user: the BoI of the whole window collapsed into a
/// single period.
MatR collapsed_boi_features(const BoIStore& store);

/// Keeps only the last `fine_periods` fine periods of every user, as if the log
/// started there; coarser scales are recomputed from what is left.
BoIStore keep_last_periods(const BoIStore& store, std::size_t fine_periods);

/// Row index of each user id.
std::map<std::string, Index> row_index(const std::vector<UserRepresentation>& reps);
std::map<std::string, Index> row_index(const BoIStore& store);

/// Stacks representation values, one row per user.
MatR stack_values(const std::vector<UserRepresentation>& reps);

}  // namespace lurm
