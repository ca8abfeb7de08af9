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

#include "lurm/stages.hpp"

#include "lurm/checkpoint.hpp"
#include "lurm/errors.hpp"
#include "lurm/hashing.hpp"
#include "lurm/item_embed.hpp"
#include "lurm/pipeline.hpp"
#include "lurm/probe.hpp"
#include "lurm/smen.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>
#include <type_traits>

namespace lurm {

namespace fs = std::filesystem;
using json = nlohmann::json;

// --- strict config parsing ------------------------------------------------------------

namespace {

class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw UsageError(where_ + " must be an object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, bool& out) {
    if (const json* x = find(key)) {
      if (!x->is_boolean()) throw UsageError(path(key) + " must be a boolean");
      out = x->get<bool>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* x = find(key)) {
      if (!x->is_number()) throw UsageError(path(key) + " must be a number");
      out = x->get<double>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* x = find(key)) {
      if (!x->is_string()) throw UsageError(path(key) + " must be a string");
      out = x->get<std::string>();
    }
  }
  template <class T>
    requires std::is_integral_v<T>
  void get(const std::string& key, T& out) {
    if (const json* x = find(key)) out = integer<T>(*x, path(key));
  }
  template <class T>
  void get(const std::string& key, std::optional<T>& out) {
    if (const json* x = find(key); x && !x->is_null()) out = integer<T>(*x, path(key));
  }

  template <class T>
  static T integer(const json& x, const std::string& where) {
    if (!x.is_number_integer()) throw UsageError(where + " must be an integer");
    if (std::is_unsigned_v<T> && !x.is_number_unsigned() && x.get<std::int64_t>() < 0) {
      throw UsageError(where + " must be >= 0");
    }
    return x.get<T>();
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw UsageError(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() || base.empty() ? q : base / q;
}

TimeRange parse_window(const json& w, const std::string& where) {
  if (!w.is_array() || w.size() != 2 || !w[0].is_string() || !w[1].is_string()) {
    throw UsageError(where + " must be [start-date, end-date]");
  }
  try {
    return {parse_date(w[0].get<std::string>()), parse_date(w[1].get<std::string>())};
  } catch (const std::exception& e) {
    throw UsageError(where + ": " + e.what());
  }
}

json window_json(TimeRange w) { return json::array({format_date(w.start), format_date(w.end)}); }

void require(bool ok, const std::string& what) {
  if (!ok) throw UsageError(what);
}

void validate(const PipelineConfig& c) {
  require(c.threads >= 1, "threads must be >= 1");
  if (c.synth) validate(*c.synth);
  require(c.synth || !c.data.events.empty(), "data.events is required without a synth block");
  require(c.synth || c.data.window, "data.window is required without a synth block");
  if (c.data.window) require(c.data.window->start < c.data.window->end, "data.window must be non-empty");
  require(!c.data.granularities.empty(), "data.granularities must not be empty");
  for (std::size_t i = 1; i < c.data.granularities.size(); ++i) {
    require(c.data.granularities[i - 1] < c.data.granularities[i], "data.granularities must run from fine to coarse");
  }
  tokenizer_by_name(c.data.tokenizer);
  require(c.data.truncation >= 1, "data.truncation must be >= 1");

  require(c.items.dim >= 1, "items.dim must be >= 1");
  require(c.items.tau > 0, "items.tau must be > 0");
  require(c.items.beta_days > 0, "items.beta_days must be > 0");
  require(c.items.lr >= 0, "items.lr must be >= 0");
  require(c.items.batch >= 2, "items.batch must be >= 2");

  require(c.vocab.clusters >= 2, "vocab.clusters must be >= 2");
  require(c.vocab.max_iters >= 1, "vocab.max_iters must be >= 1");
  require(c.vocab.minibatch_size >= 1, "vocab.minibatch_size must be >= 1");
  require(c.vocab.top_k >= 1, "vocab.top_k must be >= 1");
  require(c.vocab.temperature > 0, "vocab.temperature must be > 0");
  require(!c.vocab.sample_size || *c.vocab.sample_size >= 1, "vocab.sample_size must be >= 1");

  require(c.smen.anchors >= 1 && c.smen.dim >= 1, "smen.anchors and smen.dim must be >= 1");
  require(c.smen.tau > 0, "smen.tau must be > 0");
  require(c.smen.scales == 1 || c.smen.scales == 2, "smen.scales must be 1 or 2");
  require(c.smen.scales <= c.data.granularities.size(), "smen.scales exceeds the number of data.granularities");
  require(c.smen.lr >= 0, "smen.lr must be >= 0");
  require(c.smen.batch >= 2, "smen.batch must be >= 2");
  require(c.smen.infer_batch >= 1, "smen.infer_batch must be >= 1");

  require(c.probe.hidden >= 1, "probe.hidden must be >= 1");
  require(c.probe.lr > 0, "probe.lr must be > 0");
  require(c.probe.batch >= 1, "probe.batch must be >= 1");
  require(c.probe.max_epochs >= 1, "probe.max_epochs must be >= 1");
  require(c.probe.repeats >= 1, "probe.repeats must be >= 1");

  for (Index d : c.sweep.clusters) require(d >= 2, "sweep.clusters entries must be >= 2");
  for (std::size_t k : c.sweep.history_months) require(k >= 1, "sweep.history_months entries must be >= 1");
  if (!c.sweep.history_months.empty()) {
    require(c.data.granularities.front() == Granularity::kMonth, "sweep.history_months needs month as the finest granularity");
  }
}

}  // namespace

PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base) {
  PipelineConfig c;
  Fields top(j, "config");
  if (const json* x = top.find("artifact_dir")) {
    if (!x->is_string()) throw UsageError("config.artifact_dir must be a string");
    c.artifact_dir = resolve(base, x->get<std::string>());
  } else {
    c.artifact_dir = resolve(base, c.artifact_dir.string());
  }
  top.get("seed", c.seed);
  top.get("deterministic", c.deterministic);
  top.get("threads", c.threads);

  if (const json* x = top.find("synth")) {
    if (x->is_object() && x->contains("seed")) {
      throw UsageError("synth.seed is derived from the global seed and must not be set");
    }
    c.synth = synth_config_from_json(*x);
  }

  if (const json* x = top.find("data")) {
    Fields f(*x, "data");
    std::string events;
    f.get("events", events);
    if (!events.empty()) c.data.events = resolve(base, events);
    if (const json* w = f.find("window")) c.data.window = parse_window(*w, "data.window");
    f.get("tokenizer", c.data.tokenizer);
    f.get("truncation", c.data.truncation);
    if (const json* g = f.find("granularities")) {
      if (!g->is_array()) throw UsageError("data.granularities must be an array");
      c.data.granularities.clear();
      for (const auto& e : *g) {
        if (!e.is_string()) throw UsageError("data.granularities entries must be strings");
        try {
          c.data.granularities.push_back(granularity_from_string(e.get<std::string>()));
        } catch (const std::exception& ex) {
          throw UsageError(std::string("data.granularities: ") + ex.what());
        }
      }
    }
    f.finish();
  }

  if (const json* x = top.find("items")) {
    Fields f(*x, "items");
    f.get("dim", c.items.dim);
    f.get("tau", c.items.tau);
    f.get("beta_days", c.items.beta_days);
    f.get("lr", c.items.lr);
    f.get("batch", c.items.batch);
    f.get("epochs", c.items.epochs);
    f.finish();
  }

  if (const json* x = top.find("vocab")) {
    Fields f(*x, "vocab");
    f.get("clusters", c.vocab.clusters);
    f.get("max_iters", c.vocab.max_iters);
    f.get("minibatch_iters", c.vocab.minibatch_iters);
    f.get("minibatch_size", c.vocab.minibatch_size);
    f.get("tolerance", c.vocab.tolerance);
    std::string mode(to_string(c.vocab.mode));
    f.get("mode", mode);
    try {
      c.vocab.mode = assignment_mode_from_string(mode);
    } catch (const std::exception& e) {
      throw UsageError(std::string("vocab.mode: ") + e.what());
    }
    f.get("top_k", c.vocab.top_k);
    f.get("temperature", c.vocab.temperature);
    f.get("sample_size", c.vocab.sample_size);
    f.finish();
  }

  if (const json* x = top.find("smen")) {
    Fields f(*x, "smen");
    f.get("anchors", c.smen.anchors);
    f.get("dim", c.smen.dim);
    f.get("tau", c.smen.tau);
    f.get("scales", c.smen.scales);
    f.get("vector_gate", c.smen.vector_gate);
    f.get("per_anchor_gru", c.smen.per_anchor_gru);
    f.get("lr", c.smen.lr);
    f.get("batch", c.smen.batch);
    f.get("epochs", c.smen.epochs);
    f.get("infer_batch", c.smen.infer_batch);
    f.finish();
  }

  if (const json* x = top.find("probe")) {
    Fields f(*x, "probe");
    if (const json* t = f.find("tasks")) {
      if (!t->is_object()) throw UsageError("probe.tasks must map task names to label files");
      for (const auto& [name, p] : t->items()) {
        if (!p.is_string()) throw UsageError("probe.tasks." + name + " must be a path");
        c.probe.tasks[name] = resolve(base, p.get<std::string>());
      }
    }
    f.get("hidden", c.probe.hidden);
    f.get("lr", c.probe.lr);
    f.get("batch", c.probe.batch);
    f.get("max_epochs", c.probe.max_epochs);
    f.get("patience", c.probe.patience);
    f.get("repeats", c.probe.repeats);
    f.get("raw_boi", c.probe.raw_boi);
    f.finish();
  }

  if (const json* x = top.find("sweep")) {
    Fields f(*x, "sweep");
    if (const json* d = f.find("clusters")) {
      if (!d->is_array()) throw UsageError("sweep.clusters must be an array");
      for (const auto& e : *d) c.sweep.clusters.push_back(Fields::integer<Index>(e, "sweep.clusters"));
    }
    if (const json* h = f.find("history_months")) {
      if (!h->is_array()) throw UsageError("sweep.history_months must be an array");
      for (const auto& e : *h) c.sweep.history_months.push_back(Fields::integer<std::size_t>(e, "sweep.history_months"));
    }
    f.finish();
  }
  top.finish();
  validate(c);
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j, path.parent_path());
}

namespace {

json data_json(const DataStageConfig& d) {
  json j = {{"tokenizer", d.tokenizer}, {"truncation", d.truncation}};
  if (!d.events.empty()) j["events"] = d.events.string();
  if (d.window) j["window"] = window_json(*d.window);
  j["granularities"] = json::array();
  for (Granularity g : d.granularities) j["granularities"].push_back(std::string(to_string(g)));
  return j;
}

json items_json(const ItemStageConfig& c) {
  return {{"dim", c.dim}, {"tau", c.tau}, {"beta_days", c.beta_days}, {"lr", c.lr}, {"batch", c.batch}, {"epochs", c.epochs}};
}

json vocab_json(const VocabStageConfig& c) {
  return {{"clusters", c.clusters},
          {"max_iters", c.max_iters},
          {"minibatch_iters", c.minibatch_iters},
          {"minibatch_size", c.minibatch_size},
          {"tolerance", c.tolerance},
          {"mode", std::string(to_string(c.mode))},
          {"top_k", c.top_k},
          {"temperature", c.temperature},
          {"sample_size", c.sample_size ? json(*c.sample_size) : json(nullptr)}};
}

json smen_train_json(const SmenStageConfig& c) {
  return {{"anchors", c.anchors},         {"dim", c.dim},     {"tau", c.tau},
          {"scales", c.scales},           {"vector_gate", c.vector_gate},
          {"per_anchor_gru", c.per_anchor_gru},
          {"lr", c.lr},                   {"batch", c.batch}, {"epochs", c.epochs}};
}

json probe_json(const ProbeStageConfig& c) {
  json tasks = json::object();
  for (const auto& [name, p] : c.tasks) tasks[name] = p.string();
  return {{"tasks", tasks},           {"hidden", c.hidden},   {"lr", c.lr},
          {"batch", c.batch},         {"max_epochs", c.max_epochs},
          {"patience", c.patience},   {"repeats", c.repeats}, {"raw_boi", c.raw_boi}};
}

}  // namespace

json to_json(const PipelineConfig& c) {
  json j;
  j["artifact_dir"] = c.artifact_dir.string();
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["threads"] = c.threads;
  if (c.synth) {
    j["synth"] = to_json(*c.synth);
    j["synth"].erase("seed");
  }
  j["data"] = data_json(c.data);
  j["items"] = items_json(c.items);
  j["vocab"] = vocab_json(c.vocab);
  auto smen = smen_train_json(c.smen);
  smen["infer_batch"] = c.smen.infer_batch;
  j["smen"] = smen;
  j["probe"] = probe_json(c.probe);
  j["sweep"] = {{"clusters", c.sweep.clusters}, {"history_months", c.sweep.history_months}};
  return j;
}

// --- stage graph ----------------------------------------------------------------------

struct Pipeline::Layout {
  PipelineConfig cfg;
  fs::path synth, items, vocab, boi, smen, infer, probe;
  std::optional<std::size_t> history;  // infer and probe see only the last k fine periods
  std::string sweep_axis;
  long sweep_value = 0;
};

namespace {

using Clock = std::chrono::steady_clock;

std::string file_hash(const fs::path& p) {
  struct Entry {
    std::uintmax_t size;
    fs::file_time_type mtime;
    std::string hash;
  };
  static std::map<std::string, Entry> cache;
  std::error_code ec;
  const auto size = fs::file_size(p, ec);
  if (ec) throw DataError("cannot read " + p.string());
  const auto mtime = fs::last_write_time(p);
  const auto key = fs::absolute(p).lexically_normal().string();
  const auto it = cache.find(key);
  if (it != cache.end() && it->second.size == size && it->second.mtime == mtime) return it->second.hash;
  std::string h = sha256_file(p);
  cache[key] = {size, mtime, h};
  return h;
}

std::string rel(const fs::path& root, const fs::path& p) {
  const auto r = fs::absolute(p).lexically_normal().lexically_relative(fs::absolute(root).lexically_normal());
  if (!r.empty() && *r.begin() != "..") return r.generic_string();
  return fs::absolute(p).lexically_normal().generic_string();
}

fs::path unrel(const fs::path& root, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : root / q;
}

json read_manifest(const fs::path& dir) {
  const auto path = dir / "stage.json";
  if (!fs::exists(path)) return nullptr;
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error&) {
    throw StaleArtifactError("stale upstream artifact: " + path.string() + " is unreadable");
  }
}

std::vector<std::string> output_mismatches(const fs::path& dir, const json& manifest) {
  std::vector<std::string> bad;
  for (const auto& [name, h] : manifest.at("outputs").items()) {
    const auto p = dir / name;
    if (!fs::exists(p) || file_hash(p) != h.get<std::string>()) bad.push_back(p.string());
  }
  return bad;
}

void verify_stage(const fs::path& root, const fs::path& dir, const json* expected, std::set<std::string>& done) {
  const json m = read_manifest(dir);
  if (m.is_null()) {
    throw DataError("missing upstream artifact: " + dir.string() + " has no stage manifest; run that stage first");
  }
  const std::string stage = m.value("stage", std::string("?"));
  if (expected && m.at("config") != *expected) {
    throw StaleArtifactError("stale upstream artifact: " + dir.string() + " (" + stage +
                             ") was built with a different configuration; rerun it");
  }
  const std::string key = fs::absolute(dir).lexically_normal().string();
  if (!done.insert(key).second) return;
  if (const auto bad = output_mismatches(dir, m); !bad.empty()) {
    throw StaleArtifactError("stale upstream artifact: " + bad.front() + " does not match its manifest");
  }
  for (const auto& [name, in] : m.at("inputs").items()) {
    const auto p = unrel(root, in.at("path").get<std::string>());
    if (!fs::exists(p)) throw DataError("missing upstream artifact: " + p.string());
    if (file_hash(p) != in.at("sha256").get<std::string>()) {
      throw StaleArtifactError("stale upstream artifact: " + dir.string() + " (" + stage + ") was built from a different " +
                               p.string() + "; rerun it");
    }
  }
  for (const auto& up : m.at("upstream")) verify_stage(root, unrel(root, up.get<std::string>()), nullptr, done);
}

struct StageSpec {
  std::string name;
  fs::path dir;
  json snapshot;
  std::uint64_t seed = 0;
  std::vector<std::pair<fs::path, json>> upstream;  // stage directory and the snapshot it must carry
  std::vector<std::pair<std::string, fs::path>> inputs;
  std::function<void(const fs::path& out)> body;
};

void log_line(const PipelineOptions& o, const std::string& s) {
  if (o.log) *o.log << s << '\n';
}

StageOutcome execute(const PipelineConfig& cfg, const PipelineOptions& opts, const StageSpec& s) {
  const fs::path& root = cfg.artifact_dir;
  std::set<std::string> done;
  for (const auto& [dir, snap] : s.upstream) verify_stage(root, dir, &snap, done);

  json inputs = json::object();
  for (const auto& [key, p] : s.inputs) {
    if (!fs::exists(p)) throw DataError("missing input " + p.string());
    inputs[key] = {{"path", rel(root, p)}, {"sha256", file_hash(p)}};
  }
  json upstream = json::array();
  for (const auto& [dir, snap] : s.upstream) upstream.push_back(rel(root, dir));

  const auto shown = rel(root, s.dir);
  if (!opts.force) {
    const json old = read_manifest(s.dir);
    if (!old.is_null() && old.at("config") == s.snapshot && old.at("seed") == s.seed && old.at("inputs") == inputs &&
        output_mismatches(s.dir, old).empty()) {
      log_line(opts, "[" + s.name + "] up to date (" + shown + ")");
      return {s.name, s.dir, StageStatus::kSkipped, 0};
    }
  }

  const auto start = Clock::now();
  const fs::path tmp = s.dir.parent_path() / ("." + s.dir.filename().string() + ".partial");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  try {
    s.body(tmp);
  } catch (...) {
    fs::remove_all(tmp);
    throw;
  }
  std::vector<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(tmp)) {
    if (e.is_regular_file()) names.push_back(e.path().lexically_relative(tmp).generic_string());
  }
  std::sort(names.begin(), names.end());
  json outputs = json::object();
  for (const auto& n : names) outputs[n] = sha256_file(tmp / n);
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();

  json m;
  m["stage"] = s.name;
  m["config"] = s.snapshot;
  m["seed"] = s.seed;
  m["inputs"] = inputs;
  m["upstream"] = upstream;
  m["outputs"] = outputs;
  m["deterministic"] = cfg.deterministic;
  m["threads"] = cfg.deterministic ? std::size_t(1) : cfg.threads;
  m["wall_seconds"] = seconds;
  write_file_atomic(tmp / "stage.json", m.dump(2) + "\n");
  fs::remove_all(s.dir);
  fs::rename(tmp, s.dir);

  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", seconds);
  log_line(opts, "[" + s.name + "] done in " + buf + "s (" + shown + ")");
  return {s.name, s.dir, StageStatus::kRan, seconds};
}

std::uint64_t stage_seed(const PipelineConfig& c, const std::string& stage) { return derive_seed(c.seed, "stage." + stage); }

SynthConfig synth_config(const PipelineConfig& c) {
  SynthConfig s = c.synth.value();
  s.seed = stage_seed(c, "synth");
  return s;
}

TimeRange window_of(const PipelineConfig& c) { return c.data.window ? *c.data.window : c.synth.value().window; }

json parse_json(const PipelineConfig& c) { return {{"tokenizer", c.data.tokenizer}, {"truncation", c.data.truncation}}; }

json synth_snapshot(const PipelineConfig& c) { return {{"synth", to_json(synth_config(c))}}; }
json items_snapshot(const PipelineConfig& c) { return {{"parse", parse_json(c)}, {"items", items_json(c.items)}}; }
json vocab_snapshot(const PipelineConfig& c) { return {{"parse", parse_json(c)}, {"vocab", vocab_json(c.vocab)}}; }
json boi_snapshot(const PipelineConfig& c) {
  json g = json::array();
  for (Granularity x : c.data.granularities) g.push_back(std::string(to_string(x)));
  return {{"parse", parse_json(c)}, {"window", window_json(window_of(c))}, {"granularities", g}};
}
json smen_snapshot(const PipelineConfig& c) { return {{"smen", smen_train_json(c.smen)}}; }

ParseOptions parse_options(const PipelineConfig& c) { return {tokenizer_by_name(c.data.tokenizer), c.data.truncation}; }

void write_losses(const fs::path& path, const char* index_name, const std::vector<Real>& losses) {
  std::string out = std::string(index_name) + ",loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, static_cast<double>(losses[i]));
    out += buf;
  }
  write_file_atomic(path, out);
}

}  // namespace

Pipeline::Pipeline(PipelineConfig config, PipelineOptions options) : config_(std::move(config)), options_(options) {
  validate(config_);
  Eigen::setNbThreads(config_.deterministic ? 1 : static_cast<int>(config_.threads));
}

namespace {

Pipeline::Layout root_layout(const PipelineConfig& c) {
  Pipeline::Layout l;
  l.cfg = c;
  const auto& r = c.artifact_dir;
  l.synth = r / "synth";
  l.items = r / "items";
  l.vocab = r / "vocab";
  l.boi = r / "boi";
  l.smen = r / "smen";
  l.infer = r / "infer";
  l.probe = r / "probe";
  return l;
}

fs::path events_path(const Pipeline::Layout& l) { return l.cfg.synth ? l.synth / "events.jsonl" : l.cfg.data.events; }

void add_events(const Pipeline::Layout& l, StageSpec& s) {
  if (l.cfg.synth) s.upstream.emplace_back(l.synth, synth_snapshot(l.cfg));
  s.inputs.emplace_back("events", events_path(l));
}

std::map<std::string, fs::path> tasks_of(const Pipeline::Layout& l) {
  if (!l.cfg.probe.tasks.empty()) return l.cfg.probe.tasks;
  if (!l.cfg.synth) throw UsageError("probe.tasks is empty and there is no synth block");
  return {{"long_horizon", l.synth / "labels" / "long_horizon.csv"},
          {"recent_preference", l.synth / "labels" / "recent_preference.csv"}};
}

}  // namespace

StageOutcome Pipeline::synth_at(const Layout& l) {
  if (!l.cfg.synth) throw UsageError("the config has no synth block");
  StageSpec s{"synth", l.synth, synth_snapshot(l.cfg), stage_seed(l.cfg, "synth"), {}, {}, {}};
  s.body = [&](const fs::path& out) { write_synth(generate(synth_config(l.cfg)), out); };
  return execute(l.cfg, options_, s);
}

StageOutcome Pipeline::items_at(const Layout& l) {
  StageSpec s{"items", l.items, items_snapshot(l.cfg), stage_seed(l.cfg, "items"), {}, {}, {}};
  add_events(l, s);
  s.body = [&](const fs::path& out) {
    const Corpus corpus = load_corpus(events_path(l), parse_options(l.cfg));
    ItemTrainConfig tc;
    tc.encoder.dim = l.cfg.items.dim;
    tc.encoder.tau = static_cast<Real>(l.cfg.items.tau);
    tc.encoder.beta_seconds = std::llround(l.cfg.items.beta_days * double(kSecondsPerDay));
    tc.lr = static_cast<Real>(l.cfg.items.lr);
    tc.batch = l.cfg.items.batch;
    tc.epochs = l.cfg.items.epochs;
    tc.seed = s.seed;
    const auto r = train_item_encoder(corpus, tc);
    r.encoder.to_checkpoint().save(out / "encoder.ckpt");
    write_losses(out / "losses.csv", "epoch", r.epoch_losses);
    write_losses(out / "steps.csv", "step", r.step_losses);
  };
  return execute(l.cfg, options_, s);
}

StageOutcome Pipeline::vocab_at(const Layout& l) {
  StageSpec s{"vocab", l.vocab, vocab_snapshot(l.cfg), stage_seed(l.cfg, "vocab"), {}, {}, {}};
  add_events(l, s);
  s.upstream.emplace_back(l.items, items_snapshot(l.cfg));
  s.inputs.emplace_back("encoder", l.items / "encoder.ckpt");
  s.body = [&](const fs::path& out) {
    const Corpus corpus = load_corpus(events_path(l), parse_options(l.cfg));
    const auto encoder = ItemEncoder::from_checkpoint(Checkpoint::load(l.items / "encoder.ckpt"));
    const MatR points = sample_rows(embed_items(encoder, corpus.items), l.cfg.vocab.sample_size.value_or(default_sample_size(l.cfg.vocab.clusters)), derive_seed(s.seed, "sample"));
    VocabFitConfig vc;
    vc.clusters = l.cfg.vocab.clusters;
    vc.max_iters = l.cfg.vocab.max_iters;
    vc.minibatch_iters = l.cfg.vocab.minibatch_iters;
    vc.minibatch_size = l.cfg.vocab.minibatch_size;
    vc.tolerance = static_cast<Real>(l.cfg.vocab.tolerance);
    vc.seed = s.seed;
    vc.mode = l.cfg.vocab.mode;
    vc.soft = {l.cfg.vocab.top_k, static_cast<Real>(l.cfg.vocab.temperature)};
    const auto r = fit_vocabulary(points, vc);
    r.vocabulary.to_checkpoint().save(out / "vocab.ckpt");
    write_losses(out / "objective.csv", "pass", r.objective);
  };
  return execute(l.cfg, options_, s);
}

StageOutcome Pipeline::boi_at(const Layout& l) {
  StageSpec s{"boi", l.boi, boi_snapshot(l.cfg), stage_seed(l.cfg, "boi"), {}, {}, {}};
  add_events(l, s);
  s.upstream.emplace_back(l.items, items_snapshot(l.cfg));
  s.upstream.emplace_back(l.vocab, vocab_snapshot(l.cfg));
  s.inputs.emplace_back("encoder", l.items / "encoder.ckpt");
  s.inputs.emplace_back("vocab", l.vocab / "vocab.ckpt");
  s.body = [&](const fs::path& out) {
    const Corpus corpus = load_corpus(events_path(l), parse_options(l.cfg));
    const auto encoder = ItemEncoder::from_checkpoint(Checkpoint::load(l.items / "encoder.ckpt"));
    const auto vocab = InterestVocabulary::from_checkpoint(Checkpoint::load(l.vocab / "vocab.ckpt"));
    write_boi_store(out / "boi.tsv", encode_corpus(corpus, encoder, vocab, l.cfg.data.granularities, window_of(l.cfg)));
  };
  return execute(l.cfg, options_, s);
}

StageOutcome Pipeline::smen_at(const Layout& l) {
  StageSpec s{"smen", l.smen, smen_snapshot(l.cfg), stage_seed(l.cfg, "smen"), {}, {}, {}};
  s.upstream.emplace_back(l.boi, boi_snapshot(l.cfg));
  s.inputs.emplace_back("boi", l.boi / "boi.tsv");
  s.body = [&](const fs::path& out) {
    const BoIStore store = read_boi_store(l.boi / "boi.tsv");
    const auto& c = l.cfg.smen;
    SmenTrainConfig tc;
    tc.model.clusters = store.clusters;
    tc.model.anchors = c.anchors;
    tc.model.dim = c.dim;
    tc.model.tau = static_cast<Real>(c.tau);
    tc.model.scales = c.scales;
    tc.model.vector_gate = c.vector_gate;
    tc.model.per_anchor_gru = c.per_anchor_gru;
    tc.lr = static_cast<Real>(c.lr);
    tc.batch = c.batch;
    tc.epochs = c.epochs;
    tc.seed = s.seed;
    const auto r = lurm::train_smen(store, tc);
    r.model.to_checkpoint().save(out / "smen.ckpt");
    write_losses(out / "losses.csv", "epoch", r.epoch_losses);
    write_losses(out / "steps.csv", "step", r.step_losses);
  };
  return execute(l.cfg, options_, s);
}

StageOutcome Pipeline::infer_at(const Layout& l) {
  json snap = {{"infer_batch", l.cfg.smen.infer_batch}, {"history_months", nullptr}};
  if (l.history) snap["history_months"] = *l.history;
  StageSpec s{"infer", l.infer, snap, stage_seed(l.cfg, "infer"), {}, {}, {}};
  s.upstream.emplace_back(l.boi, boi_snapshot(l.cfg));
  s.upstream.emplace_back(l.smen, smen_snapshot(l.cfg));
  s.inputs.emplace_back("boi", l.boi / "boi.tsv");
  s.inputs.emplace_back("smen", l.smen / "smen.ckpt");
  s.body = [&](const fs::path& out) {
    BoIStore store = read_boi_store(l.boi / "boi.tsv");
    if (l.history) store = keep_last_periods(store, *l.history);
    auto model = SmenModel::from_checkpoint(Checkpoint::load(l.smen / "smen.ckpt"));
    const auto reps = infer_representations(model, store.users, store.partitions(), store.integral(), l.cfg.smen.infer_batch);
    representations_to_checkpoint(reps).save(out / "representations.ckpt");
  };
  return execute(l.cfg, options_, s);
}

StageOutcome Pipeline::probe_at(const Layout& l) {
  const auto tasks = tasks_of(l);
  json names = json::array();
  for (const auto& [name, p] : tasks) names.push_back(name);
  json pj = probe_json(l.cfg.probe);
  pj["tasks"] = names;
  json snap = {{"probe", pj}, {"history_months", nullptr}};
  if (l.history) snap["history_months"] = *l.history;
  json infer_snap = {{"infer_batch", l.cfg.smen.infer_batch}, {"history_months", snap["history_months"]}};

  StageSpec s{"probe", l.probe, snap, stage_seed(l.cfg, "probe"), {}, {}, {}};
  if (l.cfg.synth && l.cfg.probe.tasks.empty()) s.upstream.emplace_back(l.synth, synth_snapshot(l.cfg));
  s.upstream.emplace_back(l.infer, infer_snap);
  s.inputs.emplace_back("representations", l.infer / "representations.ckpt");
  if (l.cfg.probe.raw_boi) {
    s.upstream.emplace_back(l.boi, boi_snapshot(l.cfg));
    s.inputs.emplace_back("boi", l.boi / "boi.tsv");
  }
  for (const auto& [name, p] : tasks) s.inputs.emplace_back("task." + name, p);

  s.body = [&](const fs::path& out) {
    const auto reps = representations_from_checkpoint(Checkpoint::load(l.infer / "representations.ckpt"));
    const MatR x = stack_values(reps);
    const auto rows = row_index(reps);
    MatR x_raw;
    std::map<std::string, Index> rows_raw;
    if (l.cfg.probe.raw_boi) {
      BoIStore store = read_boi_store(l.boi / "boi.tsv");
      if (l.history) store = keep_last_periods(store, *l.history);
      x_raw = collapsed_boi_features(store);
      rows_raw = row_index(store);
    }
    ProbeConfig pc;
    pc.hidden = l.cfg.probe.hidden;
    pc.lr = static_cast<Real>(l.cfg.probe.lr);
    pc.batch = l.cfg.probe.batch;
    pc.max_epochs = l.cfg.probe.max_epochs;
    pc.patience = l.cfg.probe.patience;
    std::vector<std::uint64_t> seeds;
    for (std::size_t r = 0; r < l.cfg.probe.repeats; ++r) seeds.push_back(derive_seed(s.seed, "repeat." + std::to_string(r)));

    std::vector<ProbeResult> results;
    for (const auto& [name, p] : tasks) {
      const ProbeTask task = read_task(p, name);
      std::vector<std::pair<std::string, ProbeData>> reprs;
      if (l.cfg.probe.raw_boi) reprs.emplace_back("raw_boi", gather_probe_data(task, rows_raw, x_raw));
      reprs.emplace_back("smen", gather_probe_data(task, rows, x));
      for (const auto& [tag, data] : reprs) {
        const auto r = run_probe(task, tag, data, pc, seeds);
        results.insert(results.end(), r.begin(), r.end());
      }
    }
    std::string csv = metrics_csv_header() + "\n";
    json j;
    j["results"] = json::array();
    for (const auto& r : results) {
      csv += to_csv_row(r) + "\n";
      j["results"].push_back(to_json(r));
    }
    j["sweep"] = l.sweep_axis.empty() ? json(nullptr) : json{{"axis", l.sweep_axis}, {"value", l.sweep_value}};
    write_file_atomic(out / "metrics.csv", csv);
    write_file_atomic(out / "metrics.json", j.dump(2) + "\n");
  };
  return execute(l.cfg, options_, s);
}

StageOutcome Pipeline::synth() { return synth_at(root_layout(config_)); }
StageOutcome Pipeline::train_items() { return items_at(root_layout(config_)); }
StageOutcome Pipeline::fit_vocab() { return vocab_at(root_layout(config_)); }
StageOutcome Pipeline::encode_boi() { return boi_at(root_layout(config_)); }
StageOutcome Pipeline::train_smen() { return smen_at(root_layout(config_)); }
StageOutcome Pipeline::infer() { return infer_at(root_layout(config_)); }
StageOutcome Pipeline::probe() { return probe_at(root_layout(config_)); }

std::vector<StageOutcome> Pipeline::run() {
  const Layout l = root_layout(config_);
  std::vector<StageOutcome> out;
  if (config_.synth) out.push_back(synth_at(l));
  out.push_back(items_at(l));
  out.push_back(vocab_at(l));
  out.push_back(boi_at(l));
  out.push_back(smen_at(l));
  out.push_back(infer_at(l));
  out.push_back(probe_at(l));
  return out;
}

std::vector<StageOutcome> Pipeline::sweep() {
  if (config_.sweep.clusters.empty() && config_.sweep.history_months.empty()) {
    throw UsageError("sweep: both sweep.clusters and sweep.history_months are empty");
  }
  const Layout base = root_layout(config_);
  std::vector<StageOutcome> out;
  if (config_.synth) out.push_back(synth_at(base));
  out.push_back(items_at(base));
  for (Index d : config_.sweep.clusters) {
    Layout l = base;
    l.cfg.vocab.clusters = d;
    const auto dir = config_.artifact_dir / "sweep" / ("clusters_" + std::to_string(d));
    l.vocab = dir / "vocab";
    l.boi = dir / "boi";
    l.smen = dir / "smen";
    l.infer = dir / "infer";
    l.probe = dir / "probe";
    l.sweep_axis = "clusters";
    l.sweep_value = static_cast<long>(d);
    fs::create_directories(dir);
    for (auto stage : {&Pipeline::vocab_at, &Pipeline::boi_at, &Pipeline::smen_at, &Pipeline::infer_at, &Pipeline::probe_at}) {
      out.push_back((this->*stage)(l));
    }
  }
  if (!config_.sweep.history_months.empty()) {
    out.push_back(vocab_at(base));
    out.push_back(boi_at(base));
    out.push_back(smen_at(base));
  }
  for (std::size_t k : config_.sweep.history_months) {
    Layout l = base;
    const auto dir = config_.artifact_dir / "sweep" / ("history_" + std::to_string(k));
    l.infer = dir / "infer";
    l.probe = dir / "probe";
    l.history = k;
    l.sweep_axis = "history_months";
    l.sweep_value = static_cast<long>(k);
    fs::create_directories(dir);
    out.push_back(infer_at(l));
    out.push_back(probe_at(l));
  }
  return out;
}

// --- report -----------------------------------------------------------------------------

namespace {

std::string fmt(double v, const char* spec = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

void write_series(const fs::path& path, const std::vector<ReportRow>& rows, const std::string& axis, const char* column) {
  std::vector<const ReportRow*> sel;
  for (const auto& r : rows) {
    if (r.sweep_axis == axis) sel.push_back(&r);
  }
  std::sort(sel.begin(), sel.end(), [](const ReportRow* a, const ReportRow* b) {
    return std::tie(a->task, a->tag, a->sweep_value) < std::tie(b->task, b->tag, b->sweep_value);
  });
  std::string out = std::string("task,representation_tag,") + column + ",auc_mean,auc_std,acc_mean,repeats\n";
  for (const auto* r : sel) {
    out += r->task + "," + r->tag + "," + std::to_string(r->sweep_value) + "," + fmt(r->auc_mean) + "," + fmt(r->auc_std) +
           "," + fmt(r->acc_mean) + "," + std::to_string(r->repeats) + "\n";
  }
  write_file_atomic(path, out);
}

}  // namespace

Report report(const fs::path& dir, const fs::path& out) {
  if (!fs::is_directory(dir)) throw DataError("report: " + dir.string() + " is not a directory");
  Report rep;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() != "metrics.csv") continue;
    std::ifstream in(e.path());
    std::stringstream ss;
    ss << in.rdbuf();
    const auto results = parse_metrics_csv(ss.str());
    std::string axis;
    long value = 0;
    const auto sidecar = e.path().parent_path() / "metrics.json";
    if (fs::exists(sidecar)) {
      std::ifstream js(sidecar);
      try {
        const json j = json::parse(js);
        if (j.contains("sweep") && j["sweep"].is_object()) {
          axis = j["sweep"].at("axis").get<std::string>();
          value = j["sweep"].at("value").get<long>();
        }
      } catch (const std::exception& ex) {
        throw DataError("report: " + sidecar.string() + ": " + ex.what());
      }
    }
    std::map<std::pair<std::string, std::string>, std::vector<const ProbeResult*>> groups;
    for (const auto& r : results) groups[{r.task, r.tag}].push_back(&r);
    for (const auto& [key, rs] : groups) {
      ReportRow row;
      row.run = e.path().parent_path().lexically_relative(dir).generic_string();
      row.task = key.first;
      row.tag = key.second;
      row.repeats = rs.size();
      for (const auto* r : rs) {
        row.auc_mean += r->auc;
        row.acc_mean += r->acc;
      }
      row.auc_mean /= double(rs.size());
      row.acc_mean /= double(rs.size());
      if (rs.size() > 1) {
        double ss2 = 0;
        for (const auto* r : rs) ss2 += (r->auc - row.auc_mean) * (r->auc - row.auc_mean);
        row.auc_std = std::sqrt(ss2 / double(rs.size() - 1));
      }
      row.sweep_axis = axis;
      row.sweep_value = value;
      rep.rows.push_back(std::move(row));
    }
  }
  std::sort(rep.rows.begin(), rep.rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return std::tie(a.task, a.tag, a.run) < std::tie(b.task, b.tag, b.run);
  });

  std::string csv = "run,task,representation_tag,auc_mean,auc_std,acc_mean,repeats\n";
  for (const auto& r : rep.rows) {
    csv += r.run + "," + r.task + "," + r.tag + "," + fmt(r.auc_mean) + "," + fmt(r.auc_std) + "," + fmt(r.acc_mean) + "," +
           std::to_string(r.repeats) + "\n";
  }
  fs::create_directories(out);
  write_file_atomic(out / "summary.csv", csv);
  write_series(out / "series_clusters.csv", rep.rows, "clusters", "clusters");
  write_series(out / "series_history.csv", rep.rows, "history_months", "history_months");

  std::size_t wt = 4, wg = 3, wr = 3;
  for (const auto& r : rep.rows) {
    wt = std::max(wt, r.task.size());
    wg = std::max(wg, r.tag.size());
    wr = std::max(wr, r.run.size());
  }
  rep.table = pad("task", wt) + "  " + pad("tag", wg) + "  " + pad("run", wr) + "  auc              acc     n\n";
  for (const auto& r : rep.rows) {
    rep.table += pad(r.task, wt) + "  " + pad(r.tag, wg) + "  " + pad(r.run, wr) + "  " +
                 pad(fmt(r.auc_mean, "%.4f") + " +- " + fmt(r.auc_std, "%.4f"), 17) + pad(fmt(r.acc_mean, "%.4f"), 8) +
                 std::to_string(r.repeats) + "\n";
  }
  return rep;
}

}  // namespace lurm
