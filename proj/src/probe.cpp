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


#include "lurm/probe.hpp"

#include "lurm/core/adam.hpp"
#include "lurm/core/ops.hpp"
#include "lurm/errors.hpp"
#include "lurm/hashing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <cctype>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

namespace lurm {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

MatR uniform(Index rows, Index cols, Real bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> u(-bound, bound);
  MatR m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

MatR logits_of(const ProbeModel& m, const MatR& x) {
  const MatR z = (x.rowwise() - m.mean.row(0)).array().rowwise() / m.scale.row(0).array();
  const MatR h = ((z * m.w1.transpose()).rowwise() + m.b1.row(0)).cwiseMax(Real(0));
  return (h * m.w2.transpose()).rowwise() + m.b2.row(0);
}

Real cross_entropy(const MatR& logits, std::span<const Index> y) {
  Real total = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const Real top = logits.row(i).maxCoeff();
    const Real lse = top + std::log((logits.row(i).array() - top).exp().sum());
    total += lse - logits(i, y[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<Real>(logits.rows());
}

void check_labels(std::span<const Index> y, Index rows, Index classes, const char* what) {
  if (static_cast<Index>(y.size()) != rows) throw ShapeError(std::string(what) + ": label count differs from row count");
  for (Index c : y) {
    if (c < 0 || c >= classes) throw DataError(std::string(what) + ": label " + std::to_string(c) + " out of range");
  }
}

}  // namespace

// --- tasks ----------------------------------------------------------------------------

ProbeTask read_task(const std::filesystem::path& path, std::string name) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read label file " + path.string());
  ProbeTask task;
  task.name = std::move(name);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected user_id,class_index");
    const std::string user = trim(line.substr(0, comma));
    const std::string cls = trim(line.substr(comma + 1));
    Index c = -1;
    try {
      std::size_t used = 0;
      c = std::stoll(cls, &used);
      if (used != cls.size()) c = -1;
    } catch (const std::exception&) {
      c = -1;
    }
    if (user.empty() || c < 0) throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad label line");
    if (!task.labels.emplace(user, c).second) throw DataError(path.string() + ": duplicate user " + user);
    task.num_classes = std::max(task.num_classes, c + 1);
  }
  return task;
}

void write_task(const std::filesystem::path& path, const ProbeTask& task) {
  std::string out;
  for (const auto& [user, c] : task.labels) out += user + "," + std::to_string(c) + "\n";
  write_file_atomic(path, out);
}

ProbeSplit split_indices(std::size_t n, std::uint64_t seed, double train_fraction) {
  if (!(train_fraction > 0 && train_fraction < 1)) throw std::invalid_argument("split_indices: fraction must be in (0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto cut = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  ProbeSplit s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  return s;
}

// --- model ----------------------------------------------------------------------------

ProbeModel::ProbeModel(Index features, Index classes, Index hidden, std::uint64_t seed) {
  if (features < 1 || classes < 2 || hidden < 1) throw std::invalid_argument("ProbeModel: bad shape");
  std::mt19937_64 rng(seed);
  mean = MatR::Zero(1, features);
  scale = MatR::Ones(1, features);
  w1 = uniform(hidden, features, Real(1) / std::sqrt(static_cast<Real>(features)), rng);
  b1 = MatR::Zero(1, hidden);
  w2 = uniform(classes, hidden, Real(1) / std::sqrt(static_cast<Real>(hidden)), rng);
  b2 = MatR::Zero(1, classes);
}

MatR ProbeModel::predict_proba(const MatR& x) const {
  if (x.cols() != features()) throw ShapeError("ProbeModel: expected " + std::to_string(features()) + " features");
  MatR p = logits_of(*this, x);
  for (Index i = 0; i < p.rows(); ++i) {
    p.row(i).array() -= p.row(i).maxCoeff();
    p.row(i) = p.row(i).array().exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

ProbeFit train_probe(const MatR& x_train, std::span<const Index> y_train, const MatR& x_val,
                     std::span<const Index> y_val, Index classes, const ProbeConfig& config) {
  check_labels(y_train, x_train.rows(), classes, "train_probe");
  check_labels(y_val, x_val.rows(), classes, "train_probe");
  if (x_val.rows() == 0) throw DataError("train_probe: empty validation split");
  if (x_val.cols() != x_train.cols()) throw ShapeError("train_probe: feature count differs between splits");
  if (std::adjacent_find(y_train.begin(), y_train.end(), std::not_equal_to<>()) == y_train.end()) {
    throw DataError("train_probe: training split has a single class");
  }
  if (config.batch < 1) throw std::invalid_argument("train_probe: batch must be positive");

  ProbeFit fit;
  ProbeModel m(x_train.cols(), classes, config.hidden, derive_seed(config.seed, "probe.init"));
  const Index n = x_train.rows();
  m.mean = x_train.colwise().mean();
  const MatR centered = x_train.rowwise() - m.mean.row(0);
  m.scale = (centered.colwise().squaredNorm() / static_cast<Real>(n)).cwiseSqrt();
  for (Index j = 0; j < m.scale.cols(); ++j) {
    if (!(m.scale(0, j) > Real(1e-12))) m.scale(0, j) = 1;
  }
  const MatR z = centered.array().rowwise() / m.scale.row(0).array();

  std::vector<Parameter<Real>> params{{"w1", m.w1}, {"b1", m.b1}, {"w2", m.w2}, {"b2", m.b2}};
  std::vector<Parameter<Real>*> ptrs;
  for (auto& p : params) ptrs.push_back(&p);
  Adam<Real> adam(ptrs, {.lr = config.lr});
  auto sync = [&](ProbeModel& out) {
    out.w1 = params[0].value;
    out.b1 = params[1].value;
    out.w2 = params[2].value;
    out.b2 = params[3].value;
  };

  std::mt19937_64 rng(derive_seed(config.seed, "probe.shuffle"));
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index(0));
  fit.best_validation_loss = std::numeric_limits<Real>::infinity();
  fit.model = m;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      const Index b = static_cast<Index>(end - start);
      MatR xb(b, z.cols());
      MatR onehot = MatR::Zero(b, classes);
      for (Index i = 0; i < b; ++i) {
        const Index r = order[start + static_cast<std::size_t>(i)];
        xb.row(i) = z.row(r);
        onehot(i, y_train[static_cast<std::size_t>(r)]) = 1;
      }
      Tape<Real> t;
      Var<Real> h = relu(add(matmul_transposed(t.constant(std::move(xb)), t.parameter(params[0])), t.parameter(params[1])));
      Var<Real> logits = add(matmul_transposed(h, t.parameter(params[2])), t.parameter(params[3]));
      // the row max is a constant shift, so log-sum-exp stays finite
      const MatR top = logits.value().rowwise().maxCoeff();
      Var<Real> shifted = add(logits, t.constant(-top));
      Var<Real> lse = log(matmul(exp(shifted), t.constant(MatR::Ones(classes, 1))));
      Var<Real> loss = scale(sub(sum(lse), sum(mul(shifted, t.constant(std::move(onehot))))), Real(1) / static_cast<Real>(b));
      t.backward(loss);
      adam.step();
    }
    fit.epochs = epoch + 1;
    sync(m);
    const Real val_loss = cross_entropy(logits_of(m, x_val), y_val);
    if (val_loss < fit.best_validation_loss) {
      fit.best_validation_loss = val_loss;
      fit.best_epoch = epoch + 1;
      fit.model = m;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return fit;
}

// --- metrics --------------------------------------------------------------------------

double auc_binary(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("auc_binary: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2;
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1) / 2) / (p * static_cast<double>(neg));
}

ProbeMetrics evaluate_scores(const MatR& probabilities, std::span<const Index> labels) {
  const Index classes = probabilities.cols();
  check_labels(labels, probabilities.rows(), classes, "evaluate");
  if (labels.empty()) throw DataError("evaluate: empty validation split");
  ProbeMetrics out;
  std::size_t correct = 0;
  for (Index i = 0; i < probabilities.rows(); ++i) {
    Index best = 0;
    probabilities.row(i).maxCoeff(&best);
    correct += best == labels[static_cast<std::size_t>(i)];
  }
  out.acc = static_cast<double>(correct) / static_cast<double>(labels.size());

  std::vector<double> scores(labels.size());
  std::unique_ptr<bool[]> pos(new bool[labels.size()]);
  auto auc_for = [&](Index c) {
    bool any_pos = false, any_neg = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = static_cast<double>(probabilities(static_cast<Index>(i), c));
      pos[i] = labels[i] == c;
      (pos[i] ? any_pos : any_neg) = true;
    }
    if (!any_pos || !any_neg) return std::numeric_limits<double>::quiet_NaN();
    return auc_binary(scores, std::span<const bool>(pos.get(), labels.size()));
  };
  if (classes == 2) {
    out.auc = auc_for(1);
    if (std::isnan(out.auc)) {
      for (Index c = 0; c < 2; ++c) {
        if (std::find(labels.begin(), labels.end(), c) == labels.end()) out.skipped_classes.push_back(c);
      }
    }
    return out;
  }
  double total = 0;
  std::size_t used = 0;
  for (Index c = 0; c < classes; ++c) {
    const double a = auc_for(c);
    if (std::isnan(a)) {
      out.skipped_classes.push_back(c);
    } else {
      total += a;
      ++used;
    }
  }
  out.auc = used ? total / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
  return out;
}

ProbeMetrics evaluate(const ProbeModel& model, const MatR& x, std::span<const Index> labels) {
  return evaluate_scores(model.predict_proba(x), labels);
}

// --- runs -----------------------------------------------------------------------------

ProbeData gather_probe_data(const ProbeTask& task, const std::map<std::string, Index>& row_of, const MatR& features) {
  ProbeData d;
  d.x.resize(static_cast<Index>(task.labels.size()), features.cols());
  Index r = 0;
  for (const auto& [user, c] : task.labels) {
    const auto it = row_of.find(user);
    if (it == row_of.end()) throw DataError("task " + task.name + ": no representation for user " + user);
    d.x.row(r++) = features.row(it->second);
    d.y.push_back(c);
  }
  return d;
}

std::vector<ProbeResult> run_probe(const ProbeTask& task, const std::string& tag, const ProbeData& data,
                                   const ProbeConfig& config, std::span<const std::uint64_t> seeds) {
  if (task.num_classes < 2) throw DataError("task " + task.name + ": need at least two classes");
  std::vector<ProbeResult> out;
  for (std::uint64_t seed : seeds) {
    const ProbeSplit split = split_indices(data.y.size(), derive_seed(seed, "probe.split." + task.name));
    auto take = [&](const std::vector<std::size_t>& idx, MatR& x, std::vector<Index>& y) {
      x.resize(static_cast<Index>(idx.size()), data.x.cols());
      y.clear();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        x.row(static_cast<Index>(k)) = data.x.row(static_cast<Index>(idx[k]));
        y.push_back(data.y[idx[k]]);
      }
    };
    MatR xt, xv;
    std::vector<Index> yt, yv;
    take(split.train, xt, yt);
    take(split.validation, xv, yv);
    ProbeConfig cfg = config;
    cfg.seed = derive_seed(seed, "probe.train." + task.name + "." + tag);
    const ProbeFit fit = train_probe(xt, yt, xv, yv, task.num_classes, cfg);
    const ProbeMetrics m = evaluate(fit.model, xv, yv);
    out.push_back({task.name, tag, m.auc, m.acc, yt.size(), yv.size(), seed});
  }
  return out;
}

double mean_auc(std::span<const ProbeResult> results) {
  double s = 0;
  for (const auto& r : results) s += r.auc;
  return results.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(results.size());
}

std::string metrics_csv_header() { return "task,representation_tag,auc,acc,n_train,n_val,seed"; }

std::string to_csv_row(const ProbeResult& r) {
  char buf[64];
  std::string s = r.task + "," + r.tag + ",";
  std::snprintf(buf, sizeof(buf), "%.17g,%.17g,", r.auc, r.acc);
  s += buf;
  s += std::to_string(r.n_train) + "," + std::to_string(r.n_val) + "," + std::to_string(r.seed);
  return s;
}

nlohmann::json to_json(const ProbeResult& r) {
  return {{"task", r.task}, {"representation_tag", r.tag}, {"auc", r.auc}, {"acc", r.acc},
          {"n_train", r.n_train}, {"n_val", r.n_val}, {"seed", r.seed}};
}

std::vector<ProbeResult> parse_metrics_csv(const std::string& text) {
  std::vector<ProbeResult> out;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      if (line != metrics_csv_header()) throw DataError("metrics file: unexpected header '" + line + "'");
      header = false;
      continue;
    }
    std::vector<std::string> f;
    std::istringstream cells(line);
    for (std::string c; std::getline(cells, c, ',');) f.push_back(c);
    if (f.size() != 7) throw DataError("metrics file: expected 7 fields in '" + line + "'");
    try {
      out.push_back({f[0], f[1], std::stod(f[2]), std::stod(f[3]), std::stoull(f[4]), std::stoull(f[5]), std::stoull(f[6])});
    } catch (const std::exception&) {
      throw DataError("metrics file: bad numbers in '" + line + "'");
    }
  }
  return out;
}

}  // namespace lurm
