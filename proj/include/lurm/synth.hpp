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

#include "lurm/core/tensor.hpp"
#include "lurm/ingest.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lurm {

/// Topic model for synthetic behavior logs.
///
/// Items belong to a (topic, subtopic) cell. Titles mix words of the cell's
/// subtopic, words of its topic and filler words shared by every cell, so two
/// items of one cell rarely look alike before training.
///
/// Each user has a few favorite topics, never the attribute topic. The topic mixture is drawn from a
/// Dirichlet whose parameter is `favorite_alpha` on favorites and
/// `background_alpha` elsewhere. A drifting user redraws favorites and mixture
/// at the window midpoint. Behavior comes in sessions: a session picks a topic
/// from the current mixture and a subtopic, then emits a burst of items from
/// that cell.
///
/// Two labels are emitted per user with at least one event:
///  - long_horizon: one of `attribute_classes` classes. During the first half
///    of the window a session is, with probability `attribute_strength`, spent
///    on `attribute_topic` in one of the class's signature subtopics; later
///    sessions carry no trace of it.
///  - recent_preference: 1 when `preference_topic` is among the late favorites.
struct SynthConfig {
  std::size_t n_users = 5000;
  Index n_topics = 20;
  Index subtopics_per_topic = 10;
  Index items_per_subtopic = 50;
  Index vocab_per_topic = 20;
  Index vocab_per_subtopic = 30;
  Index filler_vocab = 500;
  Index topic_words_per_item = 1;
  Index subtopic_words_per_item = 2;
  Index filler_words_per_item = 2;
  TimeRange window{utc_seconds(2019, 1, 1), utc_seconds(2021, 1, 1)};
  double sessions_per_month = 6.0;
  double activity_sigma = 0.5;       // log-normal spread of per-user activity
  double mean_session_length = 4.0;  // events per session, at least one
  Index min_favorites = 1;
  Index max_favorites = 3;
  double favorite_alpha = 4.0;
  double background_alpha = 0.05;
  double drift_probability = 0.3;
  Index attribute_classes = 4;
  double attribute_strength = 0.3;
  Index attribute_topic = 19;
  Index preference_topic = 0;
  std::uint64_t seed = 1;
};

nlohmann::json to_json(const SynthConfig& c);
/// Strict: unknown keys and wrong types throw UsageError. Missing keys keep defaults.
SynthConfig synth_config_from_json(const nlohmann::json& j);
void validate(const SynthConfig& c);

struct SynthItem {
  std::string text;
  Index topic = 0;
  Index subtopic = 0;
};

struct SynthEvent {
  std::int64_t timestamp = 0;
  std::uint32_t item = 0;
};

struct SynthUser {
  std::string user_id;
  std::vector<Index> favorites_early;
  std::vector<Index> favorites_late;
  std::vector<double> theta_early;
  std::vector<double> theta_late;
  bool drift = false;
  Index attribute = 0;
  Index preference = 0;
  std::vector<Index> session_topics;  // in time order
  std::vector<SynthEvent> events;     // sorted by timestamp
};

struct SynthCorpus {
  SynthConfig config;
  std::vector<SynthItem> items;
  std::vector<SynthUser> users;  // sorted by user id
  std::size_t num_events() const;
};

/// Pure function of the configuration.
SynthCorpus generate(const SynthConfig& config);

/// Signature subtopics (of the attribute topic) of an attribute class.
std::vector<Index> attribute_signature(const SynthConfig& c, Index cls);

std::vector<BehaviorEvent> to_behavior_events(const SynthCorpus& corpus);

struct SynthFiles {
  std::filesystem::path events;
  std::filesystem::path long_horizon;
  std::filesystem::path recent_preference;
  std::filesystem::path manifest;
};

/// Writes events.jsonl, labels/long_horizon.csv, labels/recent_preference.csv
/// and manifest.json under `dir`.
SynthFiles write_synth(const SynthCorpus& corpus, const std::filesystem::path& dir);

}  // namespace lurm
