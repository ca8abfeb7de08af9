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


#include "lurm/synth.hpp"

#include "lurm/errors.hpp"
#include "lurm/hashing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

namespace lurm {

namespace {

// Keys in declaration order; shared by the JSON reader and writer.
template <typename F>
void for_each_field(SynthConfig& c, F&& f) {
  f("n_users", c.n_users);
  f("n_topics", c.n_topics);
  f("subtopics_per_topic", c.subtopics_per_topic);
  f("items_per_subtopic", c.items_per_subtopic);
  f("vocab_per_topic", c.vocab_per_topic);
  f("vocab_per_subtopic", c.vocab_per_subtopic);
  f("filler_vocab", c.filler_vocab);
  f("topic_words_per_item", c.topic_words_per_item);
  f("subtopic_words_per_item", c.subtopic_words_per_item);
  f("filler_words_per_item", c.filler_words_per_item);
  f("sessions_per_month", c.sessions_per_month);
  f("activity_sigma", c.activity_sigma);
  f("mean_session_length", c.mean_session_length);
  f("min_favorites", c.min_favorites);
  f("max_favorites", c.max_favorites);
  f("favorite_alpha", c.favorite_alpha);
  f("background_alpha", c.background_alpha);
  f("drift_probability", c.drift_probability);
  f("attribute_classes", c.attribute_classes);
  f("attribute_strength", c.attribute_strength);
  f("attribute_topic", c.attribute_topic);
  f("preference_topic", c.preference_topic);
  f("seed", c.seed);
}

std::vector<std::string> make_words(std::size_t count, std::mt19937_64& rng) {
  static constexpr char kConsonants[] = "bdfgklmnprstvz";
  static constexpr char kVowels[] = "aeiou";
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w;
    const int syllables = 2 + static_cast<int>(rng() % 2);
    for (int s = 0; s < syllables; ++s) {
      w += kConsonants[rng() % (sizeof(kConsonants) - 1)];
      w += kVowels[rng() % (sizeof(kVowels) - 1)];
    }
    if (seen.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

std::vector<double> dirichlet(const std::vector<double>& alpha, std::mt19937_64& rng) {
  std::vector<double> v(alpha.size());
  double total = 0;
  do {
    total = 0;
    for (std::size_t k = 0; k < v.size(); ++k) total += (v[k] = std::gamma_distribution<double>(alpha[k], 1.0)(rng));
  } while (!(total > 0));
  for (double& x : v) x /= total;
  return v;
}

struct Mixture {
  std::vector<Index> favorites;
  std::vector<double> theta;
};

Mixture draw_mixture(const SynthConfig& c, std::mt19937_64& rng) {
  Mixture m;
  std::vector<Index> topics;
  for (Index t = 0; t < c.n_topics; ++t) {
    if (t != c.attribute_topic) topics.push_back(t);
  }
  std::shuffle(topics.begin(), topics.end(), rng);
  const Index count = std::uniform_int_distribution<Index>(c.min_favorites, c.max_favorites)(rng);
  m.favorites.assign(topics.begin(), topics.begin() + count);
  std::sort(m.favorites.begin(), m.favorites.end());
  std::vector<double> alpha(static_cast<std::size_t>(c.n_topics), c.background_alpha);
  for (Index t : m.favorites) alpha[static_cast<std::size_t>(t)] = c.favorite_alpha;
  m.theta = dirichlet(alpha, rng);
  return m;
}

void pick_words(const std::vector<std::string>& pool, Index n, std::mt19937_64& rng, std::vector<std::string>& out) {
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  std::shuffle(idx.begin(), idx.end(), rng);
  for (Index k = 0; k < n; ++k) out.push_back(pool[idx[static_cast<std::size_t>(k)]]);
}

std::string user_name(std::size_t u) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "u%06zu", u);
  return buf;
}

}  // namespace

nlohmann::json to_json(const SynthConfig& config) {
  SynthConfig c = config;
  nlohmann::json j = nlohmann::json::object();
  for_each_field(c, [&](const char* key, auto& v) { j[key] = v; });
  j["window"] = {format_date(c.window.start), format_date(c.window.end)};
  return j;
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("synth config must be an object");
  SynthConfig c;
  std::set<std::string> known{"window"};
  for_each_field(c, [&](const char* key, auto& v) {
    known.insert(key);
    if (!j.contains(key)) return;
    using T = std::decay_t<decltype(v)>;
    const auto& x = j.at(key);
    if constexpr (std::is_floating_point_v<T>) {
      if (!x.is_number()) throw UsageError(std::string("synth.") + key + " must be a number");
    } else {
      if (!x.is_number_integer()) throw UsageError(std::string("synth.") + key + " must be an integer");
      if (std::is_unsigned_v<T> && x.get<std::int64_t>() < 0) throw UsageError(std::string("synth.") + key + " must be >= 0");
    }
    v = x.get<T>();
  });
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw UsageError("synth: unknown key '" + key + "'");
  }
  if (j.contains("window")) {
    const auto& w = j.at("window");
    if (!w.is_array() || w.size() != 2 || !w[0].is_string() || !w[1].is_string()) {
      throw UsageError("synth.window must be [start-date, end-date]");
    }
    c.window = {parse_date(w[0].get<std::string>()), parse_date(w[1].get<std::string>())};
  }
  return c;
}

void validate(const SynthConfig& c) {
  auto fail = [](const std::string& m) { throw UsageError("synth: " + m); };
  if (c.n_topics < 2) fail("n_topics must be >= 2");
  if (c.subtopics_per_topic < 1 || c.items_per_subtopic < 1) fail("subtopics and items per cell must be >= 1");
  if (c.topic_words_per_item < 0 || c.topic_words_per_item > c.vocab_per_topic) fail("topic_words_per_item must be in [0, vocab_per_topic]");
  if (c.filler_words_per_item < 0 || c.filler_words_per_item > c.filler_vocab) fail("filler_words_per_item must be in [0, filler_vocab]");
  if (c.subtopic_words_per_item < 1 || c.subtopic_words_per_item > c.vocab_per_subtopic) {
    fail("subtopic_words_per_item must be in [1, vocab_per_subtopic]");
  }
  if (!(c.window.end > c.window.start)) fail("empty window");
  const auto parts = make_partition(Granularity::kMonth, c.window);
  if (parts.size() < 13) fail("window must span at least 13 months");
  if (!(c.sessions_per_month >= 0) || !(c.activity_sigma >= 0)) fail("activity parameters must be >= 0");
  if (!(c.mean_session_length >= 1)) fail("mean_session_length must be >= 1");
  if (c.min_favorites < 1 || c.max_favorites < c.min_favorites || c.max_favorites > c.n_topics - 1) {
    fail("favorites must satisfy 1 <= min_favorites <= max_favorites < n_topics");
  }
  if (!(c.favorite_alpha > 0) || !(c.background_alpha > 0)) fail("Dirichlet parameters must be > 0");
  if (!(c.drift_probability >= 0 && c.drift_probability <= 1)) fail("drift_probability must be in [0, 1]");
  if (!(c.attribute_strength >= 0 && c.attribute_strength <= 1)) fail("attribute_strength must be in [0, 1]");
  if (c.attribute_classes < 2 || c.attribute_classes > c.subtopics_per_topic) {
    fail("attribute_classes must be in [2, subtopics_per_topic]");
  }
  if (c.preference_topic < 0 || c.preference_topic >= c.n_topics) fail("preference_topic out of range");
  if (c.attribute_topic < 0 || c.attribute_topic >= c.n_topics) fail("attribute_topic out of range");
  if (c.attribute_topic == c.preference_topic) fail("attribute_topic and preference_topic must differ");
}

std::vector<Index> attribute_signature(const SynthConfig& c, Index cls) {
  const Index width = c.subtopics_per_topic / c.attribute_classes;
  std::vector<Index> s(static_cast<std::size_t>(width));
  std::iota(s.begin(), s.end(), cls * width);
  return s;
}

std::size_t SynthCorpus::num_events() const {
  std::size_t n = 0;
  for (const auto& u : users) n += u.events.size();
  return n;
}

SynthCorpus generate(const SynthConfig& config) {
  validate(config);
  SynthCorpus out;
  out.config = config;
  const Index topics = config.n_topics, subs = config.subtopics_per_topic;

  std::mt19937_64 catalog_rng(derive_seed(config.seed, "synth.catalog"));
  const auto words = make_words(static_cast<std::size_t>(topics * config.vocab_per_topic + topics * subs * config.vocab_per_subtopic +
                                                         config.filler_vocab),
                                catalog_rng);
  auto word_pool = [&](std::size_t first, Index n) {
    return std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(first),
                                    words.begin() + static_cast<std::ptrdiff_t>(first) + n);
  };
  const auto fillers = word_pool(static_cast<std::size_t>(topics * config.vocab_per_topic + topics * subs * config.vocab_per_subtopic),
                                 config.filler_vocab);
  for (Index t = 0; t < topics; ++t) {
    const auto topic_words = word_pool(static_cast<std::size_t>(t * config.vocab_per_topic), config.vocab_per_topic);
    for (Index s = 0; s < subs; ++s) {
      const auto sub_words = word_pool(static_cast<std::size_t>(topics * config.vocab_per_topic + (t * subs + s) * config.vocab_per_subtopic),
                                       config.vocab_per_subtopic);
      for (Index i = 0; i < config.items_per_subtopic; ++i) {
        std::vector<std::string> title;
        pick_words(topic_words, config.topic_words_per_item, catalog_rng, title);
        pick_words(sub_words, config.subtopic_words_per_item, catalog_rng, title);
        pick_words(fillers, config.filler_words_per_item, catalog_rng, title);
        std::shuffle(title.begin(), title.end(), catalog_rng);
        std::string text;
        for (const auto& w : title) text += (text.empty() ? "" : " ") + w;
        text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
        out.items.push_back({std::move(text), t, s});
      }
    }
  }

  const std::int64_t start = config.window.start, end = config.window.end;
  const std::int64_t midpoint = start + (end - start) / 2;
  const double months = static_cast<double>(make_partition(Granularity::kMonth, config.window).size());
  const double sigma = config.activity_sigma;

  out.users.resize(config.n_users);
  for (std::size_t u = 0; u < config.n_users; ++u) {
    SynthUser& user = out.users[u];
    user.user_id = user_name(u);
    std::mt19937_64 rng(derive_seed(config.seed, "synth.user." + user.user_id));
    const Mixture m_early = draw_mixture(config, rng);
    user.drift = std::bernoulli_distribution(config.drift_probability)(rng);
    const Mixture m_late = user.drift ? draw_mixture(config, rng) : m_early;
    user.favorites_early = m_early.favorites;
    user.theta_early = m_early.theta;
    user.favorites_late = m_late.favorites;
    user.theta_late = m_late.theta;
    user.attribute = static_cast<Index>(rng() % static_cast<std::uint64_t>(config.attribute_classes));
    user.preference = std::binary_search(m_late.favorites.begin(), m_late.favorites.end(), config.preference_topic);

    const double activity = sigma > 0 ? std::lognormal_distribution<double>(-sigma * sigma / 2, sigma)(rng) : 1.0;
    const auto sessions = std::poisson_distribution<long>(config.sessions_per_month * months * activity)(rng);
    std::vector<std::int64_t> starts(static_cast<std::size_t>(sessions));
    std::uniform_int_distribution<std::int64_t> when(start, end - 1);
    for (auto& s : starts) s = when(rng);
    std::sort(starts.begin(), starts.end());

    std::discrete_distribution<Index> early(user.theta_early.begin(), user.theta_early.end());
    std::discrete_distribution<Index> late(user.theta_late.begin(), user.theta_late.end());
    const auto signature = attribute_signature(config, user.attribute);
    std::poisson_distribution<long> extra(config.mean_session_length - 1);
    std::uniform_int_distribution<std::int64_t> gap(30, 600);
    for (std::int64_t s : starts) {
      const bool first_half = s < midpoint;
      Index topic = first_half ? early(rng) : late(rng);
      Index sub = static_cast<Index>(rng() % static_cast<std::uint64_t>(subs));
      if (first_half && std::bernoulli_distribution(config.attribute_strength)(rng)) {
        topic = config.attribute_topic;
        sub = signature[rng() % signature.size()];
      }
      user.session_topics.push_back(topic);
      const auto cell = static_cast<std::uint64_t>((topic * subs + sub) * config.items_per_subtopic);
      const long length = 1 + extra(rng);
      std::int64_t ts = s;
      for (long k = 0; k < length && ts < end; ++k) {
        user.events.push_back({ts, static_cast<std::uint32_t>(cell + rng() % static_cast<std::uint64_t>(config.items_per_subtopic))});
        ts += gap(rng);
      }
    }
    std::stable_sort(user.events.begin(), user.events.end(),
                     [](const SynthEvent& a, const SynthEvent& b) { return a.timestamp < b.timestamp; });
  }
  return out;
}

std::vector<BehaviorEvent> to_behavior_events(const SynthCorpus& corpus) {
  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(corpus.items.size());
  for (const auto& item : corpus.items) tokens.push_back(tokenize_default(item.text));
  std::vector<BehaviorEvent> out;
  out.reserve(corpus.num_events());
  for (const auto& u : corpus.users) {
    for (const auto& e : u.events) out.push_back({u.user_id, e.timestamp, tokens[e.item]});
  }
  return out;
}

SynthFiles write_synth(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "labels");
  SynthFiles files{dir / "events.jsonl", dir / "labels" / "long_horizon.csv", dir / "labels" / "recent_preference.csv",
                   dir / "manifest.json"};
  {
    auto tmp = files.events;
    tmp += ".tmp";
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    for (const auto& u : corpus.users) {
      for (const auto& e : u.events) out << format_record(u.user_id, e.timestamp, corpus.items[e.item].text) << '\n';
    }
    out.close();
    if (!out) {
      std::filesystem::remove(tmp);
      throw DataError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, files.events);
  }
  std::string lh, rp;
  for (const auto& u : corpus.users) {
    if (u.events.empty()) continue;
    lh += u.user_id + "," + std::to_string(u.attribute) + "\n";
    rp += u.user_id + "," + std::to_string(u.preference) + "\n";
  }
  write_file_atomic(files.long_horizon, lh);
  write_file_atomic(files.recent_preference, rp);

  nlohmann::json m;
  m["config"] = to_json(corpus.config);
  m["num_events"] = corpus.num_events();
  m["items"] = nlohmann::json::array();
  for (const auto& it : corpus.items) m["items"].push_back({{"text", it.text}, {"topic", it.topic}, {"subtopic", it.subtopic}});
  m["signatures"] = nlohmann::json::array();
  for (Index c = 0; c < corpus.config.attribute_classes; ++c) m["signatures"].push_back(attribute_signature(corpus.config, c));
  m["users"] = nlohmann::json::array();
  for (const auto& u : corpus.users) {
    m["users"].push_back({{"user_id", u.user_id},
                          {"favorites_early", u.favorites_early},
                          {"favorites_late", u.favorites_late},
                          {"theta_early", u.theta_early},
                          {"theta_late", u.theta_late},
                          {"drift", u.drift},
                          {"long_horizon", u.attribute},
                          {"recent_preference", u.preference},
                          {"session_topics", u.session_topics},
                          {"events", u.events.size()}});
  }
  write_file_atomic(files.manifest, m.dump(1) + "\n");
  return files;
}

}  // namespace lurm
