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

#include "lurm/errors.hpp"
#include "lurm/probe.hpp"
#include "lurm/stages.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace lurm;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kFixtures = LURM_FIXTURE_DIR;

json tiny_json() {
  std::ifstream in(kFixtures / "tiny_pipeline.json");
  return json::parse(in);
}

PipelineConfig tiny_config(const fs::path& dir) {
  auto c = load_pipeline_config(kFixtures / "tiny_pipeline.json");
  c.artifact_dir = dir;
  return c;
}

std::size_t count_status(const std::vector<StageOutcome>& v, StageStatus s) {
  std::size_t n = 0;
  for (const auto& o : v) n += o.status == s;
  return n;
}

void flip_byte(const fs::path& p, std::size_t offset) {
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(static_cast<std::streamoff>(offset));
  char c = 0;
  f.read(&c, 1);
  c = static_cast<char>(c ^ 0x5a);
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(&c, 1);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LURM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("pipeline config: strict parsing") {
  const auto base = tiny_json();
  CHECK_NOTHROW(pipeline_config_from_json(base));

  auto bad = base;
  bad["colour"] = 1;
  CHECK_THROWS_AS(pipeline_config_from_json(bad), UsageError);
  bad = base;
  bad["smen"]["anchorz"] = 3;
  CHECK_THROWS_AS(pipeline_config_from_json(bad), UsageError);
  bad = base;
  bad["items"]["epochs"] = "three";
  CHECK_THROWS_AS(pipeline_config_from_json(bad), UsageError);
  bad = base;
  bad["items"]["epochs"] = -1;
  CHECK_THROWS_AS(pipeline_config_from_json(bad), UsageError);
  bad = base;
  bad["synth"]["seed"] = 3;
  CHECK_THROWS_AS(pipeline_config_from_json(bad), UsageError);
  bad = base;
  bad["synth"]["n_userz"] = 3;
  CHECK_THROWS_AS(pipeline_config_from_json(bad), UsageError);
  bad = base;
  bad.erase("synth");
  CHECK_THROWS_AS(pipeline_config_from_json(bad), UsageError);  // no events, no window
  bad = base;
  bad["data"]["granularities"] = {"month"};
  CHECK_THROWS_AS(pipeline_config_from_json(bad), UsageError);  // two scales need two granularities
  bad["smen"]["scales"] = 1;
  CHECK_NOTHROW(pipeline_config_from_json(bad));
  bad = base;
  bad["data"]["granularities"] = {"year", "month"};
  CHECK_THROWS_AS(pipeline_config_from_json(bad), UsageError);
  bad = base;
  bad["vocab"]["mode"] = "fuzzy";
  CHECK_THROWS_AS(pipeline_config_from_json(bad), UsageError);
  bad = base;
  bad["data"]["window"] = {"2019-01-01"};
  CHECK_THROWS_AS(pipeline_config_from_json(bad), UsageError);
  bad = base;
  bad["sweep"]["clusters"] = {4, 1};
  CHECK_THROWS_AS(pipeline_config_from_json(bad), UsageError);
  CHECK_THROWS_AS(pipeline_config_from_json(json::array()), UsageError);

  auto ext = base;
  ext.erase("synth");
  ext["data"]["events"] = "logs/events.jsonl";
  ext["data"]["window"] = {"2020-01-01", "2021-01-01"};
  ext["probe"]["tasks"] = {{"churn", "labels/churn.csv"}};
  const auto c = pipeline_config_from_json(ext, "/data/run");
  CHECK(c.data.events == fs::path("/data/run/logs/events.jsonl"));
  CHECK(c.probe.tasks.at("churn") == fs::path("/data/run/labels/churn.csv"));
  CHECK(c.artifact_dir == fs::path("/data/run/tiny_artifacts"));

  // the serialized form parses back to itself
  const auto round = pipeline_config_from_json(to_json(c));
  CHECK(to_json(round) == to_json(c));
}

TEST_CASE("pipeline: second run skips, force reruns, config change reruns only downstream") {
  lurm::testing::TempDir dir;
  auto cfg = tiny_config(dir.path());
  const auto first = Pipeline(cfg).run();
  CHECK(first.size() == 7);
  CHECK(count_status(first, StageStatus::kRan) == 7);
  const auto metrics = lurm::testing::read_text(dir / "probe" / "metrics.csv");

  const auto second = Pipeline(cfg).run();
  CHECK(count_status(second, StageStatus::kSkipped) == 7);

  const auto forced = Pipeline(cfg, {.force = true}).run();
  CHECK(count_status(forced, StageStatus::kRan) == 7);
  CHECK(lurm::testing::read_text(dir / "probe" / "metrics.csv") == metrics);

  cfg.probe.repeats = 3;
  const auto third = Pipeline(cfg).run();
  CHECK(count_status(third, StageStatus::kSkipped) == 6);
  CHECK(third.back().stage == "probe");
  CHECK(third.back().status == StageStatus::kRan);
  CHECK(parse_metrics_csv(lurm::testing::read_text(dir / "probe" / "metrics.csv")).size() == 2 * 2 * 3);

  // manifest contents
  std::ifstream in(dir / "smen" / "stage.json");
  const auto m = json::parse(in);
  CHECK(m.at("stage") == "smen");
  CHECK(m.at("inputs").at("boi").at("path") == "boi/boi.tsv");
  CHECK(m.at("outputs").contains("smen.ckpt"));
  CHECK(m.at("upstream") == json::array({"boi"}));
  CHECK(m.at("wall_seconds").get<double>() >= 0);
  CHECK(m.at("config").at("smen").at("anchors") == 2);
}

TEST_CASE("pipeline: upstream verification") {
  lurm::testing::TempDir dir;
  auto cfg = tiny_config(dir.path());

  // nothing upstream yet
  CHECK_THROWS_AS(Pipeline(cfg).train_smen(), DataError);
  CHECK_THROWS_AS(Pipeline(cfg).train_items(), DataError);

  Pipeline(cfg).run();

  SUBCASE("tampered checkpoint") {
    flip_byte(dir / "vocab" / "vocab.ckpt", 40);
    CHECK_THROWS_AS(Pipeline(cfg).encode_boi(), StaleArtifactError);
    CHECK_THROWS_AS(Pipeline(cfg, {.force = true}).train_smen(), StaleArtifactError);  // two stages below
    // rebuilding the tampered stage clears the error
    Pipeline(cfg, {.force = true}).fit_vocab();
    CHECK(Pipeline(cfg).encode_boi().status == StageStatus::kSkipped);
  }
  SUBCASE("missing upstream") {
    fs::remove_all(dir / "smen");
    CHECK_THROWS_AS(Pipeline(cfg).infer(), DataError);
  }
  SUBCASE("upstream built with another config") {
    auto changed = cfg;
    changed.items.epochs += 1;
    CHECK_THROWS_AS(Pipeline(changed).fit_vocab(), StaleArtifactError);
    Pipeline(changed).train_items();
    CHECK_THROWS_AS(Pipeline(changed).encode_boi(), StaleArtifactError);  // vocab still carries the old encoder
    const auto r = Pipeline(changed).run();
    CHECK(count_status(r, StageStatus::kRan) == 5);
  }
}

TEST_CASE("pipeline: failing stage leaves no output behind") {
  lurm::testing::TempDir dir;
  auto cfg = tiny_config(dir.path());
  Pipeline(cfg).run();
  lurm::testing::write_text(dir / "bad_labels.csv", "u000001,0\nu000001,1\n");
  cfg.probe.tasks = {{"dup", dir / "bad_labels.csv"}};
  fs::remove_all(dir / "probe");
  CHECK_THROWS_AS(Pipeline(cfg).probe(), DataError);
  CHECK_FALSE(fs::exists(dir / "probe"));
  CHECK_FALSE(fs::exists(dir / ".probe.partial"));
}

#ifndef LURM_SINGLE_PRECISION
TEST_CASE("pipeline: tiny config reproduces the recorded metrics") {
  lurm::testing::TempDir dir;
  Pipeline(tiny_config(dir.path())).run();
  const auto got = parse_metrics_csv(lurm::testing::read_text(dir / "probe" / "metrics.csv"));
  const auto want = parse_metrics_csv(lurm::testing::read_text(kFixtures / "tiny_metrics.csv"));
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CAPTURE(i);
    CHECK(got[i].task == want[i].task);
    CHECK(got[i].tag == want[i].tag);
    CHECK(got[i].seed == want[i].seed);
    CHECK(got[i].n_train == want[i].n_train);
    CHECK(got[i].n_val == want[i].n_val);
    CHECK(got[i].auc == doctest::Approx(want[i].auc).epsilon(1e-9));
    CHECK(got[i].acc == doctest::Approx(want[i].acc).epsilon(1e-9));
  }
}
#endif

TEST_CASE("pipeline: two runs from scratch are bit-identical") {
  lurm::testing::TempDir a, b;
  Pipeline(tiny_config(a.path())).run();
  Pipeline(tiny_config(b.path())).run();
  for (const char* f : {"synth/events.jsonl", "items/encoder.ckpt", "vocab/vocab.ckpt", "boi/boi.tsv", "smen/smen.ckpt",
                        "infer/representations.ckpt", "probe/metrics.csv", "probe/metrics.json"}) {
    CAPTURE(f);
    CHECK(lurm::testing::read_text(a / f) == lurm::testing::read_text(b / f));
  }
}

TEST_CASE("report: empty, two files, and sweep series") {
  lurm::testing::TempDir dir;
  {
    const auto r = report(dir.path(), dir / "out");
    CHECK(r.rows.empty());
    CHECK(lurm::testing::read_text(dir / "out" / "summary.csv") ==
          "run,task,representation_tag,auc_mean,auc_std,acc_mean,repeats\n");
  }
  CHECK_THROWS_AS(report(dir / "missing", dir / "out"), DataError);

  fs::create_directories(dir / "x" / "probe");
  fs::create_directories(dir / "y" / "probe");
  lurm::testing::write_text(dir / "x" / "probe" / "metrics.csv",
                            metrics_csv_header() + "\n" + to_csv_row({"zeta", "smen", 0.75, 0.5, 8, 2, 1}) + "\n");
  lurm::testing::write_text(dir / "y" / "probe" / "metrics.csv",
                            metrics_csv_header() + "\n" + to_csv_row({"alpha", "raw_boi", 0.5, 0.5, 8, 2, 1}) + "\n");
  const auto r = report(dir.path(), dir / "out");
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].task == "alpha");
  CHECK(r.rows[1].task == "zeta");
  CHECK(r.rows[1].run == "x/probe");
  CHECK(r.rows[1].auc_mean == 0.75);
  CHECK(r.table.find("zeta") != std::string::npos);

  lurm::testing::TempDir run;
  auto cfg = tiny_config(run.path());
  cfg.sweep.history_months.clear();
  Pipeline(cfg).sweep();
  const auto s = report(run.path(), run / "report");
  std::size_t series_rows = 0;
  for (const auto& row : s.rows) series_rows += row.sweep_axis == "clusters";
  CHECK(series_rows == 3 * 2 * 2);  // three D values, two tasks, two representations
  std::istringstream series(lurm::testing::read_text(run / "report" / "series_clusters.csv"));
  std::string line;
  std::getline(series, line);
  CHECK(line == "task,representation_tag,clusters,auc_mean,auc_std,acc_mean,repeats");
  std::vector<std::string> smen_long;
  while (std::getline(series, line)) {
    if (line.rfind("long_horizon,smen,", 0) == 0) smen_long.push_back(line);
  }
  REQUIRE(smen_long.size() == 3);
  CHECK(smen_long[0].rfind("long_horizon,smen,4,", 0) == 0);
  CHECK(smen_long[1].rfind("long_horizon,smen,8,", 0) == 0);
  CHECK(smen_long[2].rfind("long_horizon,smen,12,", 0) == 0);
  // the sweep shares the item encoder of the main run
  std::ifstream in(run / "sweep" / "clusters_4" / "vocab" / "stage.json");
  CHECK(json::parse(in).at("upstream").dump().find("\"items\"") != std::string::npos);
}

TEST_CASE("cli: exit codes") {
  lurm::testing::TempDir dir;
  auto j = tiny_json();
  j["artifact_dir"] = (dir / "art").string();
  lurm::testing::write_text(dir / "cfg.json", j.dump());
  const std::string cfg = "-c " + (dir / "cfg.json").string();

  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("run") == 1);  // missing --config
  CHECK(run_cli("train-smen " + cfg) == 2);
  CHECK(run_cli("run " + cfg) == 0);
  CHECK(fs::exists(dir / "art" / "probe" / "metrics.csv"));
  CHECK(run_cli("probe " + cfg) == 0);
  CHECK(run_cli("report " + (dir / "art").string()) == 0);
  CHECK(fs::exists(dir / "art" / "report" / "summary.csv"));

  flip_byte(dir / "art" / "boi" / "boi.tsv", 10);
  CHECK(run_cli("train-smen " + cfg) == 3);
  CHECK(run_cli("encode-boi --force " + cfg) == 0);
  CHECK(run_cli("train-smen " + cfg) == 0);

  j["smen"]["typo"] = 1;
  lurm::testing::write_text(dir / "bad.json", j.dump());
  CHECK(run_cli("run -c " + (dir / "bad.json").string()) == 1);
  lurm::testing::write_text(dir / "broken.json", "{");
  CHECK(run_cli("run -c " + (dir / "broken.json").string()) == 1);
}
