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

#include "lurm/ingest.hpp"

#include "lurm/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <map>
#include <stdexcept>

namespace lurm {

std::vector<std::string> tokenize_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> tokenize_default(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(u)));
  }
  return tokenize_whitespace(cleaned);
}

Tokenizer tokenizer_by_name(std::string_view name) {
  if (name == "default") return tokenize_default;
  if (name == "whitespace") return tokenize_whitespace;
  throw UsageError("unknown tokenizer '" + std::string(name) + "'");
}

std::vector<std::string> truncate_tokens(std::vector<std::string> tokens, std::size_t max_tokens) {
  if (max_tokens == 0) throw std::invalid_argument("truncate_tokens: threshold must be >= 1");
  if (tokens.size() > max_tokens) tokens.resize(max_tokens);
  return tokens;
}

std::optional<BehaviorEvent> parse_record(std::string_view line, const ParseOptions& opts) {
  auto j = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  auto uid = j.find("user_id");
  auto ts = j.find("ts");
  auto text = j.find("text");
  if (uid == j.end() || ts == j.end() || text == j.end()) return std::nullopt;
  if (!uid->is_string() || !text->is_string() || !ts->is_number_integer()) return std::nullopt;
  const auto t = ts->get<std::int64_t>();
  if (t <= 0) return std::nullopt;
  BehaviorEvent ev;
  ev.user_id = uid->get<std::string>();
  ev.timestamp = t;
  ev.tokens = truncate_tokens(opts.tokenizer(text->get_ref<const std::string&>()), opts.truncation);
  return ev;
}

ParseStats for_each_event(const std::filesystem::path& path, const ParseOptions& opts,
                          const std::function<void(BehaviorEvent&&)>& sink) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read behavior log " + path.string());
  ParseStats stats;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    ++stats.lines;
    auto ev = parse_record(line, opts);
    if (!ev) {
      ++stats.malformed;
      continue;
    }
    if (ev->tokens.empty()) {
      ++stats.dropped_empty;
      continue;
    }
    ++stats.events;
    sink(std::move(*ev));
  }
  if (in.bad()) throw DataError("I/O error while reading " + path.string());
  return stats;
}

ParsedLog parse_log(const std::filesystem::path& path, const ParseOptions& opts) {
  ParsedLog out;
  out.stats = for_each_event(path, opts, [&out](BehaviorEvent&& ev) { out.events.push_back(std::move(ev)); });
  return out;
}

std::string format_record(std::string_view user_id, std::int64_t ts, std::string_view text) {
  nlohmann::ordered_json j;
  j["user_id"] = user_id;
  j["ts"] = ts;
  j["text"] = text;
  return j.dump();
}

// --- time partitioning -----------------------------------------------------------

namespace {

namespace chr = std::chrono;

chr::year_month_day civil(std::int64_t seconds) {
  const auto days = chr::floor<chr::days>(chr::sys_seconds{chr::seconds{seconds}});
  return chr::year_month_day{days};
}

std::int64_t to_seconds(chr::year_month_day ymd) {
  return chr::sys_seconds{chr::sys_days{ymd}}.time_since_epoch().count();
}

unsigned months_per_period(Granularity g) {
  switch (g) {
    case Granularity::kMonth:
      return 1;
    case Granularity::kQuarter:
      return 3;
    case Granularity::kYear:
      return 12;
  }
  return 1;
}

}  // namespace

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::kMonth:
      return "month";
    case Granularity::kQuarter:
      return "quarter";
    case Granularity::kYear:
      return "year";
  }
  return "month";
}

Granularity granularity_from_string(std::string_view s) {
  if (s == "month") return Granularity::kMonth;
  if (s == "quarter") return Granularity::kQuarter;
  if (s == "year") return Granularity::kYear;
  throw UsageError("unknown granularity '" + std::string(s) + "'");
}

std::int64_t utc_seconds(int year, unsigned month, unsigned day) {
  const chr::year_month_day ymd{chr::year{year}, chr::month{month}, chr::day{day}};
  if (!ymd.ok()) throw std::invalid_argument("invalid civil date");
  return to_seconds(ymd);
}

std::int64_t parse_date(std::string_view ymd) {
  int y = 0;
  unsigned m = 0, d = 0;
  if (ymd.size() != 10 || ymd[4] != '-' || ymd[7] != '-' ||
      std::sscanf(std::string(ymd).c_str(), "%d-%u-%u", &y, &m, &d) != 3) {
    throw UsageError("expected YYYY-MM-DD, got '" + std::string(ymd) + "'");
  }
  try {
    return utc_seconds(y, m, d);
  } catch (const std::invalid_argument&) {
    throw UsageError("invalid date '" + std::string(ymd) + "'");
  }
}

std::string format_date(std::int64_t seconds) {
  const auto ymd = civil(seconds);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

TimePartition make_partition(Granularity g, TimeRange window) {
  if (window.end <= window.start) throw std::invalid_argument("make_partition: empty window");
  TimePartition part;
  part.granularity = g;
  part.window = window;
  const unsigned step = months_per_period(g);
  const auto first = civil(window.start);
  const unsigned m0 = (static_cast<unsigned>(first.month()) - 1) / step * step + 1;
  chr::year_month_day cursor{first.year(), chr::month{m0}, chr::day{1}};
  while (to_seconds(cursor) < window.end) {
    const auto ym_next = chr::year_month{cursor.year(), cursor.month()} + chr::months{static_cast<int>(step)};
    const chr::year_month_day next{ym_next.year(), ym_next.month(), chr::day{1}};
    const std::int64_t ps = std::max(to_seconds(cursor), window.start);
    const std::int64_t pe = std::min(to_seconds(next), window.end);
    part.periods.push_back({ps, pe});
    cursor = next;
  }
  return part;
}

long TimePartition::period_of(std::int64_t t) const {
  if (!window.contains(t)) return -1;
  auto it = std::upper_bound(periods.begin(), periods.end(), t,
                             [](std::int64_t v, const TimeRange& r) { return v < r.start; });
  return static_cast<long>(std::distance(periods.begin(), it)) - 1;
}

PartitionedEvents partition_time(std::vector<BehaviorEvent> events, Granularity g, TimeRange window) {
  PartitionedEvents out;
  out.partition = make_partition(g, window);
  out.buckets.resize(out.partition.size());
  std::stable_sort(events.begin(), events.end(),
                   [](const BehaviorEvent& a, const BehaviorEvent& b) { return a.timestamp < b.timestamp; });
  for (auto& ev : events) {
    const long p = out.partition.period_of(ev.timestamp);
    if (p < 0) {
      ++out.excluded;
      continue;
    }
    out.buckets[static_cast<std::size_t>(p)].push_back(std::move(ev));
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<BehaviorEvent>>> group_by_user(std::vector<BehaviorEvent> events) {
  std::map<std::string, std::vector<BehaviorEvent>> by_user;
  for (auto& ev : events) {
    auto& bucket = by_user[ev.user_id];
    bucket.push_back(std::move(ev));
  }
  std::vector<std::pair<std::string, std::vector<BehaviorEvent>>> out;
  out.reserve(by_user.size());
  for (auto& [uid, evs] : by_user) out.emplace_back(uid, std::move(evs));
  return out;
}

// --- compact corpus ---------------------------------------------------------------

std::uint32_t ItemTable::intern(std::vector<std::string> tokens) {
  std::string key;
  for (const auto& t : tokens) {
    key += t;
    key.push_back('\x1f');
  }
  auto [it, inserted] = index_.try_emplace(std::move(key), static_cast<std::uint32_t>(items_.size()));
  if (inserted) items_.push_back(std::move(tokens));
  return it->second;
}

std::size_t Corpus::num_events() const {
  std::size_t n = 0;
  for (const auto& e : events) n += e.size();
  return n;
}

long Corpus::user_index(std::string_view user_id) const {
  auto it = std::lower_bound(users.begin(), users.end(), user_id);
  if (it == users.end() || *it != user_id) return -1;
  return static_cast<long>(std::distance(users.begin(), it));
}

std::vector<BehaviorEvent> Corpus::user_events(std::size_t u) const {
  std::vector<BehaviorEvent> out;
  out.reserve(events[u].size());
  for (const auto& e : events[u]) out.push_back({users[u], e.timestamp, items.tokens(e.item)});
  return out;
}

namespace {

struct CorpusBuilder {
  Corpus corpus;
  std::unordered_map<std::string, std::size_t> user_slot;
  std::vector<std::string> users;
  std::vector<std::vector<CompactEvent>> events;

  void add(BehaviorEvent ev) {
    auto [it, inserted] = user_slot.try_emplace(ev.user_id, users.size());
    if (inserted) {
      users.push_back(ev.user_id);
      events.emplace_back();
    }
    events[it->second].push_back({ev.timestamp, corpus.items.intern(std::move(ev.tokens))});
  }

  Corpus finish() {
    std::vector<std::size_t> order(users.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return users[a] < users[b]; });
    for (std::size_t i : order) {
      auto evs = std::move(events[i]);
      std::stable_sort(evs.begin(), evs.end(),
                       [](const CompactEvent& a, const CompactEvent& b) { return a.timestamp < b.timestamp; });
      corpus.users.push_back(std::move(users[i]));
      corpus.events.push_back(std::move(evs));
    }
    return std::move(corpus);
  }
};

}  // namespace

Corpus load_corpus(const std::filesystem::path& path, const ParseOptions& opts) {
  CorpusBuilder b;
  const auto stats = for_each_event(path, opts, [&b](BehaviorEvent&& ev) { b.add(std::move(ev)); });
  Corpus c = b.finish();
  c.stats = stats;
  return c;
}

Corpus make_corpus(const std::vector<BehaviorEvent>& events) {
  CorpusBuilder b;
  for (const auto& ev : events) {
    if (ev.tokens.empty()) {
      ++b.corpus.stats.dropped_empty;
      continue;
    }
    b.add(ev);
    ++b.corpus.stats.events;
  }
  const auto stats = b.corpus.stats;
  Corpus c = b.finish();
  c.stats = stats;
  return c;
}

}  // namespace lurm
