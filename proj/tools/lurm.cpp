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

// Command-line driver for the staged pipeline.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 stale artifact.

#include "lurm/errors.hpp"
#include "lurm/stages.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <functional>
#include <iostream>
#include <string>

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kStale = 3 };

struct Common {
  std::string config;
  std::string artifact_dir;
  std::size_t threads = 0;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "pipeline config (JSON)")->required();
  cmd->add_option("--artifact-dir", c.artifact_dir, "override artifact_dir");
  cmd->add_option("--threads", c.threads, "intra-stage threads (ignored in deterministic mode)")->check(CLI::PositiveNumber);
  cmd->add_flag("--force", c.force, "rerun even when the stage is up to date");
}

lurm::Pipeline make_pipeline(const Common& c) {
  auto cfg = lurm::load_pipeline_config(c.config);
  if (!c.artifact_dir.empty()) cfg.artifact_dir = c.artifact_dir;
  if (c.threads) cfg.threads = c.threads;
  std::filesystem::create_directories(cfg.artifact_dir);
  return lurm::Pipeline(std::move(cfg), {c.force, &std::cerr});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Staged user representation pipeline"};
  app.require_subcommand(1);

  Common common;
  std::function<void()> action;
  auto stage = [&](const char* name, const char* help, auto member) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, common);
    cmd->callback([&, member] {
      action = [&, member] {
        auto p = make_pipeline(common);
        (p.*member)();
      };
    });
  };
  stage("synth", "generate the synthetic corpus and labels", &lurm::Pipeline::synth);
  stage("train-items", "train the item encoder", &lurm::Pipeline::train_items);
  stage("fit-vocab", "cluster item embeddings into the interest vocabulary", &lurm::Pipeline::fit_vocab);
  stage("encode-boi", "encode per-period bag-of-interests sequences", &lurm::Pipeline::encode_boi);
  stage("train-smen", "train the sequence compression model", &lurm::Pipeline::train_smen);
  stage("infer", "compute user representations", &lurm::Pipeline::infer);
  stage("probe", "fit downstream probes and write metrics", &lurm::Pipeline::probe);
  stage("run", "every stage from synth (when configured) to probe", &lurm::Pipeline::run);
  stage("sweep", "cluster-number and history-length sweeps", &lurm::Pipeline::sweep);

  std::string report_dir, report_out;
  auto* rep = app.add_subcommand("report", "aggregate probe metrics below an artifact directory");
  rep->add_option("dir", report_dir, "artifact directory")->required();
  rep->add_option("-o,--out", report_out, "output directory (default: <dir>/report)");
  rep->callback([&] {
    action = [&] {
      const std::filesystem::path out = report_out.empty() ? std::filesystem::path(report_dir) / "report" : std::filesystem::path(report_out);
      std::cout << lurm::report(report_dir, out).table;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    action();
  } catch (const lurm::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const lurm::StaleArtifactError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kStale;
  } catch (const lurm::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
