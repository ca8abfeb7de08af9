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
#include "lurm/probe.hpp"
#include "lurm/synth.hpp"
#include "test_util.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <fstream>
#include <map>
#include <set>

using namespace lurm;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.n_users = 40;
  c.n_topics = 4;
  c.subtopics_per_topic = 4;
  c.items_per_subtopic = 5;
  c.vocab_per_topic = 4;
  c.vocab_per_subtopic = 6;
  c.filler_vocab = 30;
  c.max_favorites = 2;
  c.sessions_per_month = 2;
  c.attribute_topic = 3;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("config json is strict and round trips") {
  SynthConfig c = small_config();
  c.window = {parse_date("2018-03-01"), parse_date("2019-06-01")};
  const auto back = synth_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.window.start == c.window.start);
  CHECK_THROWS_AS(synth_config_from_json({{"n_user", 3}}), UsageError);
  CHECK_THROWS_AS(synth_config_from_json({{"n_users", -3}}), UsageError);
  CHECK_THROWS_AS(synth_config_from_json({{"n_topics", 2.5}}), UsageError);
  CHECK_THROWS_AS(synth_config_from_json({{"window", {"2019-01-01"}}}), UsageError);
  CHECK(synth_config_from_json(nlohmann::json::object()).n_users == SynthConfig{}.n_users);
}

TEST_CASE("inconsistent configs are rejected") {
  auto bad = [](auto edit) {
    SynthConfig c = small_config();
    edit(c);
    CHECK_THROWS_AS(generate(c), UsageError);
  };
  bad([](SynthConfig& c) { c.n_topics = 1; });
  bad([](SynthConfig& c) { c.window = {parse_date("2019-01-01"), parse_date("2020-01-01")}; });
  bad([](SynthConfig& c) { c.attribute_classes = 5; });
  bad([](SynthConfig& c) { c.preference_topic = 4; });
  bad([](SynthConfig& c) { c.background_alpha = 0; });
  bad([](SynthConfig& c) { c.max_favorites = 4; });
  bad([](SynthConfig& c) { c.attribute_topic = 0; });
  bad([](SynthConfig& c) { c.min_favorites = 0; });
  bad([](SynthConfig& c) { c.subtopic_words_per_item = 7; });
  bad([](SynthConfig& c) { c.filler_words_per_item = 31; });
  SynthConfig ok = small_config();
  ok.window = {parse_date("2019-01-01"), parse_date("2020-01-02")};
  CHECK_NOTHROW(generate(ok));
}

TEST_CASE("no users gives empty files") {
  SynthConfig c = small_config();
  c.n_users = 0;
  lurm::testing::TempDir dir;
  const auto files = write_synth(generate(c), dir.path());
  CHECK(lurm::testing::read_text(files.events).empty());
  CHECK(lurm::testing::read_text(files.long_horizon).empty());
  CHECK(lurm::testing::read_text(files.recent_preference).empty());
  CHECK(nlohmann::json::parse(lurm::testing::read_text(files.manifest))["users"].empty());
}

TEST_CASE("generation is a pure function of the config") {
  const SynthConfig c = small_config();
  lurm::testing::TempDir a, b;
  const auto fa = write_synth(generate(c), a.path());
  const auto fb = write_synth(generate(c), b.path());
  CHECK(lurm::testing::read_text(fa.events) == lurm::testing::read_text(fb.events));
  CHECK(lurm::testing::read_text(fa.manifest) == lurm::testing::read_text(fb.manifest));
  SynthConfig other = c;
  other.seed = 12;
  CHECK(generate(other).num_events() != generate(c).num_events());

  // a user's stream does not depend on how many other users there are
  SynthConfig fewer = c;
  fewer.n_users = 2;
  const auto small = generate(fewer), full = generate(c);
  for (std::size_t u = 0; u < 2; ++u) CHECK(small.users[u].events.size() == full.users[u].events.size());
}

TEST_CASE("events are in window, sorted, on the declared vocabulary; labels cover the users") {
  const SynthConfig c = small_config();
  const SynthCorpus corpus = generate(c);
  lurm::testing::TempDir dir;
  const auto files = write_synth(corpus, dir.path());
  std::set<std::string> vocab;
  for (const auto& it : corpus.items)
    for (const auto& t : tokenize_default(it.text)) vocab.insert(t);
  CHECK(vocab.size() <= static_cast<std::size_t>(c.n_topics * (c.vocab_per_topic + c.subtopics_per_topic * c.vocab_per_subtopic) +
                                                 c.filler_vocab));

  const auto parsed = parse_log(files.events);
  CHECK(parsed.stats.malformed == 0);
  CHECK(parsed.events.size() == corpus.num_events());
  std::map<std::string, std::int64_t> last;
  for (const auto& e : parsed.events) {
    CHECK(c.window.contains(e.timestamp));
    for (const auto& t : e.tokens) CHECK(vocab.count(t) == 1);
    CHECK(e.timestamp >= last[e.user_id]);
    last[e.user_id] = e.timestamp;
  }
  std::set<std::string> ids;
  for (const auto& u : corpus.users) ids.insert(u.user_id);
  for (const auto& path : {files.long_horizon, files.recent_preference}) {
    const auto task = read_task(path, "t");
    CHECK(task.labels.size() <= ids.size());
    CHECK(task.labels.size() > ids.size() / 2);
    for (const auto& [user, cls] : task.labels) CHECK(ids.count(user) == 1);
  }
  CHECK(read_task(files.long_horizon, "lh").num_classes <= c.attribute_classes);
  for (const auto& u : corpus.users) {
    CHECK(u.preference == (std::find(u.favorites_late.begin(), u.favorites_late.end(), 0) != u.favorites_late.end()));
    CHECK(u.favorites_early.size() >= 1);
    CHECK(u.favorites_early.size() <= 2);
    CHECK(std::find(u.favorites_early.begin(), u.favorites_early.end(), 3) == u.favorites_early.end());
    if (!u.drift) CHECK(u.theta_late == u.theta_early);
    // favorites dominate the mixture
    double fav = 0;
    for (Index t : u.favorites_early) fav += u.theta_early[static_cast<std::size_t>(t)];
    CHECK(fav > 0.5);
  }
}

TEST_CASE("topic frequencies match each user's Dirichlet draw (chi-square)") {
  SynthConfig c = small_config();
  c.drift_probability = 0;
  c.mean_session_length = 1;  // one event per session, so event topics are multinomial draws
  c.sessions_per_month = 20;
  c.favorite_alpha = 1.0;
  c.background_alpha = 1.0;
  c.attribute_strength = 0;
  c.n_users = 30;
  const SynthCorpus corpus = generate(c);
  lurm::testing::TempDir dir;
  const auto files = write_synth(corpus, dir.path());
  const auto manifest = nlohmann::json::parse(lurm::testing::read_text(files.manifest));
  std::map<std::string, Index> topic_of;
  for (const auto& it : manifest["items"]) topic_of[it["text"].get<std::string>()] = it["topic"].get<Index>();
  std::map<std::string, std::vector<double>> theta;
  for (const auto& u : manifest["users"]) theta[u["user_id"]] = u["theta_early"].get<std::vector<double>>();

  std::map<std::string, std::vector<double>> counts;
  std::ifstream in(files.events);
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    auto& cnt = counts[j["user_id"]];
    cnt.resize(4);
    cnt[static_cast<std::size_t>(topic_of.at(j["text"].get<std::string>()))] += 1;
  }
  double stat = 0, dof = 0;
  for (const auto& [user, cnt] : counts) {
    const double n = cnt[0] + cnt[1] + cnt[2] + cnt[3];
    // cells with expected count under 5 are pooled into one bin
    double pooled_obs = 0, pooled_exp = 0;
    int bins = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const double e = n * theta[user][k];
      if (e < 5) {
        pooled_obs += cnt[k];
        pooled_exp += e;
        continue;
      }
      stat += (cnt[k] - e) * (cnt[k] - e) / e;
      ++bins;
    }
    if (pooled_exp >= 5) {
      stat += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
      ++bins;
    }
    if (bins > 1) dof += bins - 1;
  }
  REQUIRE(dof > 30);
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), stat));
  CAPTURE(stat);
  CAPTURE(dof);
  CHECK(p > 0.01);
}

TEST_CASE("long-horizon signature appears in the first half only") {
  SynthConfig c = small_config();
  c.n_users = 200;
  c.attribute_strength = 0.6;
  const SynthCorpus corpus = generate(c);
  const std::int64_t mid = c.window.start + (c.window.end - c.window.start) / 2;
  double early_hits = 0, early_n = 0, late_hits = 0, late_n = 0, wrong_class = 0;
  for (const auto& u : corpus.users) {
    const auto sig = attribute_signature(c, u.attribute);
    for (const auto& e : u.events) {
      const auto& item = corpus.items[e.item];
      const bool on_topic = item.topic == c.attribute_topic;
      const bool hit = on_topic && std::find(sig.begin(), sig.end(), item.subtopic) != sig.end();
      wrong_class += on_topic && !hit && e.timestamp < mid;
      (e.timestamp < mid ? early_hits : late_hits) += hit;
      (e.timestamp < mid ? early_n : late_n) += 1;
    }
  }
  // sessions, not events, are replaced, so the event share is near the session share
  CHECK(early_hits / early_n == doctest::Approx(0.6).epsilon(0.1));
  // late attribute-topic visits come only from the small background mixture weight
  CHECK(late_hits / late_n < 0.02);
  CHECK(wrong_class / early_n < 0.02);
}
