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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lurm {

/// One timestamped user action with tokenized item content.
struct BehaviorEvent {
  std::string user_id;
  std::int64_t timestamp = 0;  // seconds since epoch, UTC
  std::vector<std::string> tokens;

  friend bool operator==(const BehaviorEvent&, const BehaviorEvent&) = default;
};

using Tokenizer = std::function<std::vector<std::string>(std::string_view)>;

/// Lowercases, strips punctuation, splits on whitespace.
std::vector<std::string> tokenize_default(std::string_view text);
/// Splits on whitespace only.
std::vector<std::string> tokenize_whitespace(std::string_view text);
/// Looks up a tokenizer by name ("default" or "whitespace").
Tokenizer tokenizer_by_name(std::string_view name);

std::vector<std::string> truncate_tokens(std::vector<std::string> tokens, std::size_t max_tokens);

struct ParseOptions {
  Tokenizer tokenizer = tokenize_default;
  std::size_t truncation = 35;
};

struct ParseStats {
  std::size_t lines = 0;
  std::size_t events = 0;
  std::size_t malformed = 0;
  std::size_t dropped_empty = 0;
};

/// Parses one JSON record line. Returns nullopt for malformed records; an
/// event with empty tokens is returned as-is (the caller decides to drop).
std::optional<BehaviorEvent> parse_record(std::string_view line, const ParseOptions& opts);

/// Streams events from a newline-delimited JSON log in file order.
/// Throws DataError when the file cannot be read.
ParseStats for_each_event(const std::filesystem::path& path, const ParseOptions& opts,
                          const std::function<void(BehaviorEvent&&)>& sink);

struct ParsedLog {
  std::vector<BehaviorEvent> events;
  ParseStats stats;
};

ParsedLog parse_log(const std::filesystem::path& path, const ParseOptions& opts = {});

/// Serializes an event back to the log line format.
std::string format_record(std::string_view user_id, std::int64_t ts, std::string_view text);

// --- time partitioning -------------------------------------------------------

enum class Granularity { kMonth, kQuarter, kYear };

std::string_view to_string(Granularity g);
Granularity granularity_from_string(std::string_view s);

/// Half-open range of seconds.
struct TimeRange {
  std::int64_t start = 0;
  std::int64_t end = 0;

  bool contains(std::int64_t t) const { return t >= start && t < end; }
  friend bool operator==(const TimeRange&, const TimeRange&) = default;
};

/// Calendar-aligned periods covering a window, clipped to the window edges.
struct TimePartition {
  Granularity granularity = Granularity::kMonth;
  TimeRange window;
  std::vector<TimeRange> periods;

  /// Index of the period holding `t`, or -1 outside the window.
  long period_of(std::int64_t t) const;
  std::size_t size() const { return periods.size(); }
};

TimePartition make_partition(Granularity g, TimeRange window);

/// Seconds since epoch of 00:00:00 UTC on the given civil date.
std::int64_t utc_seconds(int year, unsigned month, unsigned day);
/// Parses "YYYY-MM-DD" into utc seconds.
std::int64_t parse_date(std::string_view ymd);
std::string format_date(std::int64_t seconds);

struct PartitionedEvents {
  TimePartition partition;
  std::vector<std::vector<BehaviorEvent>> buckets;
  std::size_t excluded = 0;
};

/// Stable-sorts one user's events by timestamp and buckets them per period.
/// Empty periods yield empty buckets; out-of-window events are counted.
PartitionedEvents partition_time(std::vector<BehaviorEvent> events, Granularity g, TimeRange window);

/// Groups events by user, preserving per-user input order. Users are returned
/// in lexicographic id order.
std::vector<std::pair<std::string, std::vector<BehaviorEvent>>> group_by_user(std::vector<BehaviorEvent> events);

// --- compact corpus ---------------------------------------------------------------

/// Interned item contents. Events that share the same token sequence share an
/// item id, so per-item work (encoding, cluster assignment) is done once.
class ItemTable {
 public:
  std::uint32_t intern(std::vector<std::string> tokens);
  const std::vector<std::string>& tokens(std::uint32_t id) const { return items_[id]; }
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<std::vector<std::string>> items_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct CompactEvent {
  std::int64_t timestamp = 0;
  std::uint32_t item = 0;
};

/// A parsed log held per user. Users are sorted by id; each user's events are
/// stable-sorted by timestamp (ties keep file order).
struct Corpus {
  ItemTable items;
  std::vector<std::string> users;
  std::vector<std::vector<CompactEvent>> events;
  ParseStats stats;

  std::size_t num_events() const;
  long user_index(std::string_view user_id) const;
  /// Expands one user's events back to BehaviorEvent form.
  std::vector<BehaviorEvent> user_events(std::size_t u) const;
};

Corpus load_corpus(const std::filesystem::path& path, const ParseOptions& opts = {});
Corpus make_corpus(const std::vector<BehaviorEvent>& events);

}  // namespace lurm
