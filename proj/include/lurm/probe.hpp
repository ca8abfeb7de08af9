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

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace lurm {

/// A labeled downstream task: user id to class index in [0, num_classes).
struct ProbeTask {
  std::string name;
  std::map<std::string, Index> labels;
  Index num_classes = 0;
};

/// Reads `user_id,class_index` lines. Blank lines and lines starting with '#'
/// are ignored. The class count is one past the largest index seen.
ProbeTask read_task(const std::filesystem::path& path, std::string name);
void write_task(const std::filesystem::path& path, const ProbeTask& task);

struct ProbeSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Seeded shuffle of [0, n) cut at floor(train_fraction * n).
ProbeSplit split_indices(std::size_t n, std::uint64_t seed, double train_fraction = 0.8);

struct ProbeConfig {
  Index hidden = 64;
  Real lr = Real(1e-3);
  std::size_t batch = 128;
  std::size_t max_epochs = 200;
  std::size_t patience = 5;
  std::uint64_t seed = 1;
};

/// One hidden layer MLP with a softmax output over standardized features.
struct ProbeModel {
  ProbeModel() = default;
  ProbeModel(Index features, Index classes, Index hidden, std::uint64_t seed);

  Index features() const { return w1.cols(); }
  Index classes() const { return w2.rows(); }

  /// Class probabilities, one row per input row.
  MatR predict_proba(const MatR& x) const;

  MatR mean, scale;  // 1 x features
  MatR w1, b1, w2, b2;
};

struct ProbeFit {
  ProbeModel model;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  Real best_validation_loss = 0;
};

/// Trains on the given rows and stops when the validation cross-entropy has not
/// improved for `patience` epochs, returning the best weights.
ProbeFit train_probe(const MatR& x_train, std::span<const Index> y_train, const MatR& x_val,
                     std::span<const Index> y_val, Index classes, const ProbeConfig& config);

/// Mann-Whitney AUC of `scores` for the positives; tied scores count one half.
/// NaN when either class is absent.
double auc_binary(std::span<const double> scores, std::span<const bool> positive);

struct ProbeMetrics {
  double auc = 0;
  double acc = 0;
  std::vector<Index> skipped_classes;  // absent from the evaluated labels
};

/// Binary tasks score class 1; multi-class tasks average one-vs-rest AUCs over
/// the classes present. Accuracy is argmax accuracy.
ProbeMetrics evaluate_scores(const MatR& probabilities, std::span<const Index> labels);
ProbeMetrics evaluate(const ProbeModel& model, const MatR& x, std::span<const Index> labels);

struct ProbeResult {
  std::string task;
  std::string tag;
  double auc = 0;
  double acc = 0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::uint64_t seed = 0;
};

/// Features for every labeled user, in sorted user id order. Throws DataError
/// when a labeled user has no row in `features`.
struct ProbeData {
  MatR x;
  std::vector<Index> y;
};
ProbeData gather_probe_data(const ProbeTask& task, const std::map<std::string, Index>& row_of, const MatR& features);

/// Split, train and evaluate once per seed.
std::vector<ProbeResult> run_probe(const ProbeTask& task, const std::string& tag, const ProbeData& data,
                                   const ProbeConfig& config, std::span<const std::uint64_t> seeds);

double mean_auc(std::span<const ProbeResult> results);

std::string metrics_csv_header();
std::string to_csv_row(const ProbeResult& r);
nlohmann::json to_json(const ProbeResult& r);
std::vector<ProbeResult> parse_metrics_csv(const std::string& text);

}  // namespace lurm
