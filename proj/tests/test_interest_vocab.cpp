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
#include "lurm/interest_vocab.hpp"
#include "test_util.hpp"

#include <cmath>
#include <map>
#include <random>
#include <set>

using namespace lurm;

namespace {

MatR random_unit_rows(Index n, Index h, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  MatR m(n, h);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  m.rowwise().normalize();
  return m;
}

double choose2(double n) { return n * (n - 1) / 2; }

// Adjusted Rand index from the contingency table.
double adjusted_rand(const std::vector<int>& a, const std::vector<Index>& b) {
  std::map<std::pair<int, Index>, double> joint;
  std::map<int, double> ra;
  std::map<Index, double> rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  double sj = 0, sa = 0, sb = 0;
  for (const auto& [k, v] : joint) sj += choose2(v);
  for (const auto& [k, v] : ra) sa += choose2(v);
  for (const auto& [k, v] : rb) sb += choose2(v);
  const double expected = sa * sb / choose2(static_cast<double>(a.size()));
  return (sj - expected) / (0.5 * (sa + sb) - expected);
}

std::vector<Index> labels_of(const InterestVocabulary& v, const MatR& x) {
  std::vector<Index> out;
  for (Index i = 0; i < x.rows(); ++i) out.push_back(v.assign_hard(x.row(i).transpose()));
  return out;
}

Assignment hard(Index j) { return {{j, 1.0}}; }

}  // namespace

TEST_CASE("fit_vocabulary: exact fit on three points") {
  MatR x = MatR::Identity(3, 4);
  x.row(2) << 0.6, 0.0, 0.8, 0.0;
  const auto res = fit_vocabulary(x, {.clusters = 3, .seed = 4});
  CHECK(res.objective.back() == doctest::Approx(1.0).epsilon(1e-12));
  const MatR& c = res.vocabulary.centroids();
  for (Index i = 0; i < 3; ++i) {
    double best = 0;
    for (Index j = 0; j < 3; ++j) best = std::max(best, c.row(j).dot(x.row(i)));
    CHECK(best == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("fit_vocabulary: duplicated points") {
  MatR x(4, 3);
  x << 1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1, 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto res = fit_vocabulary(x, {.clusters = 2, .seed = seed});
    const MatR& c = res.vocabulary.centroids();
    std::set<std::pair<double, double>> got{{c(0, 0), c(0, 1)}, {c(1, 0), c(1, 1)}};
    CHECK(got == std::set<std::pair<double, double>>{{1, 0}, {0, 1}});
  }
}

TEST_CASE("fit_vocabulary: recovers four separated directions") {
  std::mt19937_64 rng(17);
  const MatR dirs = random_unit_rows(4, 16, rng);
  std::normal_distribution<double> noise(0, 0.05);
  MatR x(200, 16);
  std::vector<int> truth;
  for (Index i = 0; i < 200; ++i) {
    const int k = static_cast<int>(i % 4);
    truth.push_back(k);
    for (Index c = 0; c < 16; ++c) x(i, c) = dirs(k, c) + noise(rng);
  }
  x.rowwise().normalize();
  const auto res = fit_vocabulary(x, {.clusters = 4, .seed = 3});
  CHECK(adjusted_rand(truth, labels_of(res.vocabulary, x)) >= 0.99);
  CHECK(res.converged);
}

TEST_CASE("property: objective never decreases and centroids stay unit norm") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 20 + static_cast<Index>(rng() % 300);
    const Index k = 2 + static_cast<Index>(rng() % 12);
    const MatR x = random_unit_rows(n, 6, rng);
    const auto res = fit_vocabulary(x, {.clusters = k, .max_iters = 50, .minibatch_size = 64, .seed = rng()});
    for (std::size_t i = 1; i < res.objective.size(); ++i) CHECK(res.objective[i] >= res.objective[i - 1]);
    CHECK(res.iterations <= 50);
    CHECK(res.objective.size() == res.iterations + 1);
    for (Index j = 0; j < k; ++j) CHECK(std::abs(res.vocabulary.centroids().row(j).norm() - 1.0) < 1e-6);
  }
}

TEST_CASE("fit_vocabulary: errors") {
  std::mt19937_64 rng(6);
  CHECK_THROWS_AS(fit_vocabulary(random_unit_rows(3, 4, rng), {.clusters = 5}), DataError);
  MatR bad = random_unit_rows(10, 4, rng);
  bad.row(3) *= 2;
  CHECK_THROWS(fit_vocabulary(bad, {.clusters = 2}));
}

TEST_CASE("sample_rows") {
  std::mt19937_64 rng(7);
  const MatR x = random_unit_rows(50, 3, rng);
  CHECK(sample_rows(x, 80, 1) == x);
  const MatR s = sample_rows(x, 10, 1);
  CHECK(s.rows() == 10);
  CHECK(s == sample_rows(x, 10, 1));
}

TEST_CASE("assign: examples") {
  std::mt19937_64 rng(8);
  const MatR c = random_unit_rows(10, 5, rng);
  const InterestVocabulary v(c);
  CHECK(v.assign_hard(c.row(7).transpose()) == 7);

  MatR basis = MatR::Zero(6, 6);
  for (Index j = 0; j < 6; ++j) basis(j, j) = 1;
  const InterestVocabulary axes(basis);
  VecR e = VecR::Zero(6);
  e(2) = e(5) = std::sqrt(0.5);
  CHECK(axes.assign_hard(e) == 2);

  const MatR big = random_unit_rows(50, 12, rng);
  const InterestVocabulary v50(big);
  for (int trial = 0; trial < 200; ++trial) {
    const VecR q = random_unit_rows(1, 12, rng).row(0).transpose();
    Index best = 0;
    for (Index j = 1; j < 50; ++j) {
      if (big.row(j).dot(q) > big.row(best).dot(q)) best = j;
    }
    CHECK(v50.assign_hard(q) == best);
  }
  CHECK_THROWS_AS(v.assign_hard(VecR::Zero(3)), ShapeError);
}

TEST_CASE("assign: soft mode") {
  std::mt19937_64 rng(9);
  const MatR c = random_unit_rows(20, 6, rng);
  const InterestVocabulary v(c, AssignmentMode::kSoft, {.top_k = 3, .temperature = 0.1});
  for (int trial = 0; trial < 50; ++trial) {
    const VecR q = random_unit_rows(1, 6, rng).row(0).transpose();
    const Assignment a = v.assign(q);
    REQUIRE(a.size() == 3);
    std::vector<std::pair<double, Index>> scored;
    for (Index j = 0; j < 20; ++j) scored.emplace_back(-c.row(j).dot(q), j);
    std::sort(scored.begin(), scored.end());
    double z = 0;
    for (int k = 0; k < 3; ++k) z += std::exp(-scored[static_cast<std::size_t>(k)].first / 0.1);
    std::map<Index, double> want;
    for (int k = 0; k < 3; ++k) want[scored[static_cast<std::size_t>(k)].second] = std::exp(-scored[static_cast<std::size_t>(k)].first / 0.1) / z;
    double total = 0;
    for (const auto& [j, w] : a) {
      REQUIRE(want.count(j));
      CHECK(std::abs(w - want[j]) < 1e-12);
      total += w;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
    const auto rows = v.assign_rows(MatR(q.transpose()));
    CHECK(rows[0].size() == 3);
  }
}

TEST_CASE("vocabulary checkpoint round trip and validation") {
  std::mt19937_64 rng(10);
  const InterestVocabulary v(random_unit_rows(5, 4, rng), AssignmentMode::kSoft, {.top_k = 2, .temperature = 0.5});
  const auto back = InterestVocabulary::from_checkpoint(v.to_checkpoint());
  CHECK(back.centroids() == v.centroids());
  CHECK(back.mode() == AssignmentMode::kSoft);
  CHECK(back.soft_config().top_k == 2);
  CHECK_THROWS(InterestVocabulary(MatR::Identity(1, 3)));
  MatR nan = MatR::Identity(3, 3);
  nan(1, 1) = std::nan("");
  CHECK_THROWS(InterestVocabulary(nan));
}

TEST_CASE("boi_encode: examples") {
  const std::vector<Assignment> as{hard(2), hard(2), hard(5), hard(2)};
  std::vector<const Assignment*> ptrs;
  for (const auto& a : as) ptrs.push_back(&a);
  const auto b = boi_encode(ptrs, 8);
  CHECK(b.nnz() == 2);
  CHECK(std::abs(b.at(2) - std::log(4.0)) < 1e-15);
  CHECK(std::abs(b.at(5) - std::log(2.0)) < 1e-15);
  CHECK(boi_encode(std::span<const Assignment* const>{}, 8).empty());
}

TEST_CASE("boi_encode: dense histogram oracle, permutation invariance, count recovery") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Index d = 100;
    std::vector<Assignment> as;
    std::vector<double> hist(d, 0.0);
    const int n = trial == 0 ? 1000 : static_cast<int>(rng() % 1000);
    for (int i = 0; i < n; ++i) {
      const Index j = static_cast<Index>(rng() % 30) * 3;
      as.push_back(hard(j));
      hist[static_cast<std::size_t>(j)] += 1;
    }
    std::vector<const Assignment*> ptrs;
    for (const auto& a : as) ptrs.push_back(&a);
    const auto b = boi_encode(ptrs, d);
    for (Index j = 0; j < d; ++j) CHECK(std::abs(b.at(j) - std::log1p(hist[static_cast<std::size_t>(j)])) < 1e-12);
    CHECK(b.nnz() <= std::min<Index>(d, n));
    for (const auto& [j, v] : b.entries()) {
      CHECK(v >= std::log(2.0) - 1e-15);
      const double c = std::expm1(v);
      CHECK(std::abs(c - std::round(c)) < 1e-9);
      CHECK(std::round(c) == hist[static_cast<std::size_t>(j)]);
    }
    std::shuffle(ptrs.begin(), ptrs.end(), rng);
    CHECK(boi_encode(ptrs, d) == b);
  }
}

TEST_CASE("boi store round trip") {
  lurm::testing::TempDir dir;
  BoIStore store;
  store.clusters = 6;
  store.window = {parse_date("2019-01-01"), parse_date("2021-01-01")};
  store.granularities = {Granularity::kMonth, Granularity::kYear};
  const auto parts = store.partitions();
  for (const char* id : {"a", "b"}) {
    UserBoI u{id, {}};
    for (std::size_t s = 0; s < 2; ++s) {
      BoISequence seq{store.granularities[s], std::vector<SparseVector>(parts[s].size(), SparseVector(6))};
      seq.periods[1] = SparseVector(6, {{0, std::log1p(3.0)}, {4, 0.123456789012345678}});
      u.scales.push_back(seq);
    }
    store.users.push_back(u);
  }
  {
    UserBoI quiet{"c", {}};
    for (std::size_t s = 0; s < 2; ++s) {
      quiet.scales.push_back({store.granularities[s], std::vector<SparseVector>(parts[s].size(), SparseVector(6))});
    }
    store.users.push_back(quiet);
  }
  write_boi_store(dir / "boi.tsv", store);
  const auto back = read_boi_store(dir / "boi.tsv");
  CHECK(back.clusters == 6);
  CHECK(back.window == store.window);
  REQUIRE(back.users.size() == 3);
  CHECK(back.users[2].nonempty_periods() == 0);
  for (std::size_t u = 0; u < 3; ++u) {
    for (std::size_t s = 0; s < 2; ++s) CHECK(back.users[u].scales[s].periods == store.users[u].scales[s].periods);
  }
  CHECK(back.find("b") == 1);
  CHECK(back.find("c") == 2);
  CHECK(back.find("d") == -1);

  lurm::testing::write_text(dir / "bad.tsv", lurm::testing::read_text(dir / "boi.tsv") + "a\tmonth\t99\t1:0.5\n");
  CHECK_THROWS_AS(read_boi_store(dir / "bad.tsv"), DataError);
  {
    auto text = lurm::testing::read_text(dir / "boi.tsv");
    text.resize(text.rfind("c\t"));
    lurm::testing::write_text(dir / "short.tsv", text);
    CHECK_THROWS_AS(read_boi_store(dir / "short.tsv"), DataError);
  }
  lurm::testing::write_text(dir / "bad2.tsv", "nonsense\n");
  CHECK_THROWS_AS(read_boi_store(dir / "bad2.tsv"), DataError);
}

TEST_CASE("build_boi_sequences: lengths, single event, and scale additivity") {
  std::mt19937_64 rng(12);
  std::vector<std::string> words;
  for (int i = 0; i < 30; ++i) words.push_back("w" + std::to_string(i));
  const ItemEncoder enc(words, {.dim = 8}, 1);
  const InterestVocabulary vocab(random_unit_rows(12, 8, rng));
  const std::vector<Granularity> grans{Granularity::kMonth, Granularity::kYear};

  const TimeRange five{utc_seconds(2015, 1, 1), utc_seconds(2020, 1, 1)};
  const auto one = build_boi_sequences({{"u", utc_seconds(2016, 3, 4), {"w1", "w2"}}}, vocab, enc, grans, five);
  REQUIRE(one.scales.size() == 2);
  CHECK(one.scales[0].periods.size() == 60);
  CHECK(one.scales[1].periods.size() == 5);
  CHECK(one.nonempty_periods(0) == 1);
  CHECK(one.nonempty_periods(1) == 1);
  const auto& m = one.scales[0].periods[14];
  const auto& y = one.scales[1].periods[1];
  REQUIRE(m.nnz() == 1);
  CHECK(m == y);
  CHECK(std::abs(m.entries()[0].second - std::log(2.0)) < 1e-15);

  const TimeRange two{utc_seconds(2019, 1, 1), utc_seconds(2021, 1, 1)};
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<BehaviorEvent> events;
    for (int i = 0; i < 300; ++i) {
      std::vector<std::string> toks;
      for (int k = 0; k < 3; ++k) toks.push_back(words[rng() % words.size()]);
      events.push_back({"u", two.start + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(two.end - two.start)), toks});
    }
    const auto seqs = build_boi_sequences(events, vocab, enc, grans, two);
    REQUIRE(seqs.scales[1].periods.size() == 2);
    for (std::size_t yr = 0; yr < 2; ++yr) {
      std::vector<double> sum(12, 0.0);
      for (std::size_t mo = 12 * yr; mo < 12 * yr + 12; ++mo) {
        for (const auto& [j, c] : counts_from_boi(seqs.scales[0].periods[mo], true)) sum[static_cast<std::size_t>(j)] += c;
      }
      const auto yearly = counts_from_boi(seqs.scales[1].periods[yr], true);
      for (Index j = 0; j < 12; ++j) {
        const double got = yearly.count(j) ? yearly.at(j) : 0.0;
        CHECK(got == sum[static_cast<std::size_t>(j)]);
      }
    }
    const auto parts = std::vector<TimePartition>{make_partition(Granularity::kMonth, two), make_partition(Granularity::kYear, two)};
    const auto agg = aggregate_scale(seqs.scales[0].periods, 0, parts[0], parts[1], true);
    CHECK(agg == seqs.scales[1].periods);
    std::size_t c0 = 0;
    const auto part = aggregate_scale(std::span(seqs.scales[0].periods).subspan(14, 5), 14, parts[0], parts[1], true, &c0);
    CHECK(c0 == 1);
    CHECK(part.size() == 1);

    // the corpus path agrees with the event path
    const Corpus corpus = make_corpus(events);
    const BoIEncoder benc(enc, vocab);
    const auto assigned = benc.assign_items(corpus.items);
    const auto fast = build_user_boi("u", corpus.events[0], assigned, vocab.size(), parts);
    for (std::size_t s = 0; s < 2; ++s) CHECK(fast.scales[s].periods == seqs.scales[s].periods);
    CHECK(collapse(seqs.scales[0].periods, 12, true) == collapse(seqs.scales[1].periods, 12, true));
  }
}
