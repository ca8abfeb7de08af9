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


#include <doctest.h>

#include "lurm/errors.hpp"
#include "lurm/ingest.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>

using namespace lurm;
using lurm::testing::TempDir;
using lurm::testing::write_text;

namespace {

const std::filesystem::path kFixtures = LURM_FIXTURE_DIR;

BehaviorEvent ev(std::string user, std::int64_t ts, std::vector<std::string> toks = {"x"}) {
  return {std::move(user), ts, std::move(toks)};
}

}  // namespace

TEST_CASE("parse_log: empty file") {
  TempDir dir;
  write_text(dir / "empty.jsonl", "");
  const auto log = parse_log(dir / "empty.jsonl");
  CHECK(log.events.empty());
  CHECK(log.stats.malformed == 0);
}

TEST_CASE("parse_log: truncated JSON line is skipped and counted") {
  TempDir dir;
  write_text(dir / "log.jsonl",
             format_record("a", 100, "hello world") + "\n" + R"({"user_id": "b", "ts": 12, "te)" + "\n");
  const auto log = parse_log(dir / "log.jsonl");
  REQUIRE(log.events.size() == 1);
  CHECK(log.events[0].user_id == "a");
  CHECK(log.stats.malformed == 1);
}

TEST_CASE("parse_log: type and range violations are malformed") {
  TempDir dir;
  write_text(dir / "log.jsonl",
             R"({"user_id": 5, "ts": 12, "text": "a"})" "\n"
             R"({"user_id": "u", "ts": "12", "text": "a"})" "\n"
             R"({"user_id": "u", "ts": 0, "text": "a"})" "\n"
             R"({"user_id": "u", "ts": 1.5, "text": "a"})" "\n"
             R"({"user_id": "u", "ts": 7})" "\n"
             R"([1, 2, 3])" "\n"
             R"({"user_id": "u", "ts": 7, "text": "!!! ..."})" "\n");
  const auto log = parse_log(dir / "log.jsonl");
  CHECK(log.events.empty());
  CHECK(log.stats.malformed == 6);
  CHECK(log.stats.dropped_empty == 1);
}

TEST_CASE("parse_log: 100-line fixture") {
  const auto log = parse_log(kFixtures / "sample_100.jsonl");
  REQUIRE(log.events.size() == 100);
  CHECK(log.stats.malformed == 0);
  for (int i = 0; i < 100; ++i) {
    const auto& e = log.events[static_cast<std::size_t>(i)];
    CAPTURE(i);
    CHECK(e.user_id == "u0" + std::to_string(i % 10));
    CHECK(e.timestamp == 1546300800 + 3600 * i);
    const std::vector<std::string> want{"item", std::to_string(i), "alpha", "beta" + std::to_string(i % 5), "gamma"};
    CHECK(e.tokens == want);
  }
}

TEST_CASE("parse_log: unreadable file is fatal") {
  CHECK_THROWS_AS(parse_log("/nonexistent/dir/log.jsonl"), DataError);
}

TEST_CASE("parse_log: truncation applies") {
  TempDir dir;
  write_text(dir / "log.jsonl", format_record("a", 5, "one two three four") + "\n");
  const auto log = parse_log(dir / "log.jsonl", {.tokenizer = tokenize_default, .truncation = 2});
  REQUIRE(log.events.size() == 1);
  CHECK(log.events[0].tokens == std::vector<std::string>{"one", "two"});
}

TEST_CASE("tokenizers") {
  CHECK(tokenize_default("Hello, World!  it's") == std::vector<std::string>{"hello", "world", "its"});
  CHECK(tokenize_whitespace("Hello, World!") == std::vector<std::string>{"Hello,", "World!"});
  CHECK_THROWS_AS(tokenizer_by_name("bpe"), UsageError);
}

TEST_CASE("truncate_tokens") {
  std::vector<std::string> forty;
  for (int i = 0; i < 40; ++i) forty.push_back("t" + std::to_string(i));
  const auto t35 = truncate_tokens(forty, 35);
  REQUIRE(t35.size() == 35);
  CHECK(std::equal(t35.begin(), t35.end(), forty.begin()));

  const std::vector<std::string> ten(forty.begin(), forty.begin() + 10);
  CHECK(truncate_tokens(ten, 24) == ten);
  CHECK(truncate_tokens({}, 7).empty());
  CHECK_THROWS(truncate_tokens(ten, 0));
}

TEST_CASE("partition sizes for a five-year window") {
  const TimeRange window{utc_seconds(2015, 1, 1), utc_seconds(2020, 1, 1)};
  CHECK(make_partition(Granularity::kMonth, window).size() == 60);
  CHECK(make_partition(Granularity::kYear, window).size() == 5);
  CHECK(make_partition(Granularity::kQuarter, window).size() == 20);
}

TEST_CASE("partition is calendar aligned, contiguous and clipped to the window") {
  const TimeRange window{parse_date("2019-01-15"), parse_date("2019-04-10")};
  const auto p = make_partition(Granularity::kMonth, window);
  REQUIRE(p.size() == 4);
  CHECK(p.periods.front().start == window.start);
  CHECK(p.periods[1].start == parse_date("2019-02-01"));
  CHECK(p.periods[2].start == parse_date("2019-03-01"));
  CHECK(p.periods.back().end == window.end);
  for (std::size_t i = 1; i < p.size(); ++i) CHECK(p.periods[i].start == p.periods[i - 1].end);
  CHECK(format_date(parse_date("2020-02-29")) == "2020-02-29");
  CHECK_THROWS(make_partition(Granularity::kMonth, TimeRange{5, 5}));
}

TEST_CASE("partition_time: one event at window start") {
  const TimeRange window{utc_seconds(2019, 1, 1), utc_seconds(2021, 1, 1)};
  const auto parts = partition_time({ev("u", window.start)}, Granularity::kMonth, window);
  REQUIRE(parts.buckets.size() == 24);
  CHECK(parts.buckets[0].size() == 1);
  for (std::size_t i = 1; i < 24; ++i) CHECK(parts.buckets[i].empty());
  CHECK(parts.excluded == 0);
}

TEST_CASE("partition_time: out-of-window events are excluded and counted") {
  const TimeRange window{utc_seconds(2019, 1, 1), utc_seconds(2019, 3, 1)};
  const auto parts =
      partition_time({ev("u", window.start - 1), ev("u", window.end), ev("u", window.end - 1)}, Granularity::kMonth,
                     window);
  CHECK(parts.excluded == 2);
  CHECK(parts.buckets[1].size() == 1);
}

TEST_CASE("partition_time: timestamp ties keep input order") {
  const TimeRange window{utc_seconds(2019, 1, 1), utc_seconds(2019, 2, 1)};
  const auto t = window.start + 100;
  const auto parts = partition_time({ev("u", t, {"b"}), ev("u", t - 5, {"c"}), ev("u", t, {"a"})},
                                    Granularity::kMonth, window);
  REQUIRE(parts.buckets[0].size() == 3);
  CHECK(parts.buckets[0][0].tokens[0] == "c");
  CHECK(parts.buckets[0][1].tokens[0] == "b");
  CHECK(parts.buckets[0][2].tokens[0] == "a");
}

TEST_CASE("property: partition completeness and month/year nesting") {
  std::mt19937_64 rng(11);
  const TimeRange window{utc_seconds(2017, 1, 1), utc_seconds(2020, 1, 1)};
  std::uniform_int_distribution<std::int64_t> when(window.start - 86400 * 40, window.end + 86400 * 40);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<BehaviorEvent> events;
    const int n = 1 + trial * 7;
    for (int i = 0; i < n; ++i) events.push_back(ev("u", when(rng), {"e" + std::to_string(i)}));

    std::multiset<std::string> in_window;
    for (const auto& e : events) {
      if (window.contains(e.timestamp)) in_window.insert(e.tokens[0]);
    }
    const auto months = partition_time(events, Granularity::kMonth, window);
    const auto years = partition_time(events, Granularity::kYear, window);
    std::multiset<std::string> bucketed;
    for (std::size_t b = 0; b < months.buckets.size(); ++b) {
      for (const auto& e : months.buckets[b]) {
        bucketed.insert(e.tokens[0]);
        CHECK(months.partition.periods[b].contains(e.timestamp));
      }
    }
    CHECK(bucketed == in_window);
    CHECK(months.excluded == events.size() - in_window.size());

    REQUIRE(years.buckets.size() == 3);
    for (std::size_t y = 0; y < 3; ++y) {
      std::vector<BehaviorEvent> joined;
      for (std::size_t m = 12 * y; m < 12 * y + 12; ++m) {
        joined.insert(joined.end(), months.buckets[m].begin(), months.buckets[m].end());
      }
      CHECK(joined == years.buckets[y]);
    }
  }
}

TEST_CASE("group_by_user and corpus construction") {
  std::vector<BehaviorEvent> events{ev("b", 30, {"p"}), ev("a", 20, {"q"}), ev("b", 10, {"q"}), ev("a", 20, {"r"})};
  const auto groups = group_by_user(events);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].first == "a");
  CHECK(groups[1].second.size() == 2);

  const Corpus c = make_corpus(events);
  CHECK(c.users == std::vector<std::string>{"a", "b"});
  CHECK(c.items.size() == 3);
  CHECK(c.num_events() == 4);
  CHECK(c.user_index("b") == 1);
  CHECK(c.user_index("zz") == -1);
  const auto b = c.user_events(1);
  REQUIRE(b.size() == 2);
  CHECK(b[0].timestamp == 10);
  CHECK(b[0].tokens == std::vector<std::string>{"q"});
  const auto a = c.user_events(0);
  CHECK(a[0].tokens[0] == "q");  // tie on ts keeps input order
}
