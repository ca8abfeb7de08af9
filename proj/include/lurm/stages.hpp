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

#include "lurm/ingest.hpp"
#include "lurm/interest_vocab.hpp"
#include "lurm/synth.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lurm {

struct DataStageConfig {
  std::filesystem::path events;     // ignored when a synth block is present
  std::optional<TimeRange> window;  // defaults to the synthetic window
  std::string tokenizer = "default";
  std::size_t truncation = 35;
  std::vector<Granularity> granularities{Granularity::kMonth, Granularity::kYear};
};

struct ItemStageConfig {
  Index dim = 128;
  double tau = 0.1;
  double beta_days = 5;
  double lr = 1e-3;
  std::size_t batch = 256;
  std::size_t epochs = 10;
};

struct VocabStageConfig {
  Index clusters = 500;
  std::size_t max_iters = 100;
  std::size_t minibatch_iters = 20;
  std::size_t minibatch_size = 1024;
  double tolerance = 1e-6;
  AssignmentMode mode = AssignmentMode::kHard;
  Index top_k = 3;
  double temperature = 0.1;
  std::optional<std::size_t> sample_size;  // items sampled for clustering; unset: 50 per cluster
};

struct SmenStageConfig {
  Index anchors = 10;
  Index dim = 128;
  double tau = 0.1;
  std::size_t scales = 2;
  bool vector_gate = false;
  bool per_anchor_gru = false;
  double lr = 1e-3;
  std::size_t batch = 256;
  std::size_t epochs = 10;
  std::size_t infer_batch = 256;
};

struct ProbeStageConfig {
  std::map<std::string, std::filesystem::path> tasks;  // empty with synth: both synthetic tasks
  Index hidden = 64;
  double lr = 1e-3;
  std::size_t batch = 128;
  std::size_t max_epochs = 200;
  std::size_t patience = 5;
  std::size_t repeats = 3;
  bool raw_boi = true;
};

struct SweepStageConfig {
  std::vector<Index> clusters;
  std::vector<std::size_t> history_months;
};

struct PipelineConfig {
  std::filesystem::path artifact_dir = "artifacts";
  std::uint64_t seed = 1;
  bool deterministic = true;
  std::size_t threads = 1;
  std::optional<SynthConfig> synth;  // seed is derived, never given
  DataStageConfig data;
  ItemStageConfig items;
  VocabStageConfig vocab;
  SmenStageConfig smen;
  ProbeStageConfig probe;
  SweepStageConfig sweep;
};

/// Strict parse: unknown keys and wrong types throw UsageError. Relative
/// paths are resolved against `base`.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
nlohmann::json to_json(const PipelineConfig& c);

enum class StageStatus { kRan, kSkipped };

struct StageOutcome {
  std::string stage;
  std::filesystem::path dir;
  StageStatus status = StageStatus::kRan;
  double seconds = 0;
};

struct PipelineOptions {
  bool force = false;
  std::ostream* log = nullptr;
};

/// Stage graph over one artifact directory. Every stage writes into a
/// temporary sibling directory and renames it into place together with a
/// stage.json manifest (config snapshot, seed, input and output hashes,
/// wall time). A stage whose manifest matches the current config and inputs
/// is skipped unless `force` is set. Missing upstream stages throw DataError;
/// upstream outputs that no longer match their manifest, or that were built
/// from a different config, throw StaleArtifactError.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, PipelineOptions options = {});

  const PipelineConfig& config() const { return config_; }
  const std::filesystem::path& root() const { return config_.artifact_dir; }

  StageOutcome synth();
  StageOutcome train_items();
  StageOutcome fit_vocab();
  StageOutcome encode_boi();
  StageOutcome train_smen();
  StageOutcome infer();
  StageOutcome probe();
  /// synth (when configured) through probe.
  std::vector<StageOutcome> run();
  /// Cluster-number runs under sweep/clusters_<D> (sharing the item encoder)
  /// and history runs under sweep/history_<k> (sharing the trained model).
  std::vector<StageOutcome> sweep();

  struct Layout;

 private:
  StageOutcome synth_at(const Layout& l);
  StageOutcome items_at(const Layout& l);
  StageOutcome vocab_at(const Layout& l);
  StageOutcome boi_at(const Layout& l);
  StageOutcome smen_at(const Layout& l);
  StageOutcome infer_at(const Layout& l);
  StageOutcome probe_at(const Layout& l);

  PipelineConfig config_;
  PipelineOptions options_;
};

struct ReportRow {
  std::string run;  // probe directory relative to the artifact root
  std::string task;
  std::string tag;
  double auc_mean = 0;
  double auc_std = 0;
  double acc_mean = 0;
  std::size_t repeats = 0;
  std::string sweep_axis;  // "clusters", "history_months" or empty
  long sweep_value = 0;
};

struct Report {
  std::vector<ReportRow> rows;  // sorted by (task, tag, run)
  std::string table;
};

/// Aggregates every probe metrics file below `dir`. Writes summary.csv,
/// series_clusters.csv and series_history.csv into `out`.
Report report(const std::filesystem::path& dir, const std::filesystem::path& out);

}  // namespace lurm
