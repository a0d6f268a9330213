// SPDX-License-Identifier: Apache-2.0
#include "dcsst/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dcsst/error.hpp"

namespace fs = std::filesystem;

namespace dcsst {

Ablation parse_ablation(const std::string& name) {
  if (name == "full") return Ablation::Full;
  if (name == "no-dw") return Ablation::NoDynamicWindow;
  if (name == "no-cs") return Ablation::NoCrossScale;
  if (name == "baseline") return Ablation::Baseline;
  throw ConfigError("unknown ablation '" + name + "' (expected full, no-dw, no-cs or baseline)");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::NoDynamicWindow: return "no-dw";
    case Ablation::NoCrossScale: return "no-cs";
    case Ablation::Baseline: return "baseline";
  }
  return "full";
}

void apply_ablation(ModelConfig& cfg, Ablation a) {
  if (a == Ablation::NoDynamicWindow || a == Ablation::Baseline) cfg.dynamic_window = false;
  if (a == Ablation::NoCrossScale || a == Ablation::Baseline) cfg.cross_scale = false;
}

ModelConfig RunConfig::effective_model() const {
  ModelConfig m = model;
  apply_ablation(m, ablation);
  m.validate();
  return m;
}

TrainConfig RunConfig::effective_train() const {
  TrainConfig t = train;
  if (supervised_only) t.tau = 1.0;
  t.validate();
  return t;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (apply_model_key(cfg.model, k, v) || apply_train_key(cfg.train, k, v)) continue;
    if (k == "ablation") cfg.ablation = parse_ablation(v);
    else if (k == "supervised_only") cfg.supervised_only = parse_bool(k, v);
    else if (k == "manifest") cfg.manifest = v;
    else if (k == "split") cfg.split = v;
    else throw ConfigError("unknown config key '" + k + "'");
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_text(const RunConfig& cfg) {
  KeyValues kv = model_config_entries(cfg.model);
  for (auto& e : train_config_entries(cfg.train)) kv.push_back(std::move(e));
  kv.emplace_back("ablation", ablation_name(cfg.ablation));
  kv.emplace_back("supervised_only", cfg.supervised_only ? "true" : "false");
  if (!cfg.manifest.empty()) kv.emplace_back("manifest", cfg.manifest);
  if (!cfg.split.empty()) kv.emplace_back("split", cfg.split);
  return format_key_values(kv);
}

ExperimentData load_experiment_data(const DatasetManifest& manifest, const DatasetSplit& split,
                                    std::size_t image_size) {
  if (split.classes != manifest.classes) {
    throw ConfigError("split and manifest disagree on the class table");
  }
  ExperimentData d;
  d.manifest = manifest;
  d.split = split;
  d.labeled = load_images(manifest, split.labeled, image_size);
  if (d.labeled.empty()) throw ConfigError("the split has no labeled samples");
  d.stats = compute_channel_stats(d.labeled.images);
  d.labeled.images = normalize_channels(d.labeled.images, d.stats);
  d.unlabeled = load_images(manifest, split.unlabeled, image_size);
  if (!d.unlabeled.empty()) d.unlabeled.images = normalize_channels(d.unlabeled.images, d.stats);
  d.test = load_images(manifest, split.test, image_size);
  if (!d.test.empty()) d.test.images = normalize_channels(d.test.images, d.stats);
  return d;
}

KeyValues checkpoint_metadata(const std::vector<std::string>& classes, std::uint64_t seed,
                              const RunConfig& cfg) {
  std::string names;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (i) names += ",";
    names += classes[i];
  }
  return {{"classes", names},
          {"seed", std::to_string(seed)},
          {"ablation", ablation_name(cfg.ablation)},
          {"supervised_only", cfg.supervised_only ? "true" : "false"}};
}

NamedTensors stats_tensors(const ChannelStats& stats) {
  return {{"input.mean", Tensor({stats.mean.size()}, stats.mean)},
          {"input.std", Tensor({stats.stddev.size()}, stats.stddev)}};
}

ChannelStats stats_from_tensors(const NamedTensors& extra) {
  ChannelStats s;
  for (const auto& [name, t] : extra) {
    if (name == "input.mean") s.mean.assign(t.data().begin(), t.data().end());
    if (name == "input.std") s.stddev.assign(t.data().begin(), t.data().end());
  }
  if (s.mean.empty() || s.stddev.size() != s.mean.size()) {
    throw FormatError("checkpoint lacks input normalization statistics");
  }
  return s;
}

std::string predictions_jsonl(const std::vector<std::string>& ids, const std::vector<int>& truth,
                              const Tensor& probs) {
  std::string out;
  const std::size_t C = probs.dim(1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    nlohmann::ordered_json j;
    j["id"] = ids[i];
    j["truth"] = truth[i];
    j["probs"] = std::vector<double>(probs.data().begin() + static_cast<std::ptrdiff_t>(i * C),
                                     probs.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * C));
    out += j.dump() + "\n";
  }
  return out;
}

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string metrics_json(const RunMetrics& m) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["auc_roc"] = m.auc_roc;
  j["balanced_accuracy"] = m.balanced_accuracy;
  j["f1"] = m.f1;
  j["cohens_kappa"] = m.cohens_kappa;
  return j.dump(2) + "\n";
}

std::string history_jsonl(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& r : history) out += r.to_json() + "\n";
  return out;
}

std::vector<int> argmax_rows(const Tensor& probs) {
  const std::size_t N = probs.dim(0), C = probs.dim(1);
  std::vector<int> pred(N);
  for (std::size_t i = 0; i < N; ++i) {
    const double* row = probs.data().data() + i * C;
    pred[i] = static_cast<int>(std::max_element(row, row + C) - row);
  }
  return pred;
}

}  // namespace

ExperimentResult run_experiment(const RunConfig& cfg, const ExperimentData& data,
                                const ExperimentOptions& options) {
  const ModelConfig mcfg = cfg.effective_model();
  const TrainConfig tcfg = cfg.effective_train();
  if (mcfg.num_classes != data.manifest.num_classes()) {
    throw ConfigError("model has " + std::to_string(mcfg.num_classes) + " classes, data has " +
                      std::to_string(data.manifest.num_classes()));
  }
  if (data.test.empty()) throw ConfigError("the split has no test samples");
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };
  const bool write = !options.out_dir.empty();
  const fs::path root(options.out_dir);
  if (write) {
    fs::create_directories(root);
    write_file(root / "run_config.txt", run_config_text(cfg));
  }

  ExperimentResult result;
  std::size_t budget = options.stop_after.value_or(static_cast<std::size_t>(-1));
  for (std::uint64_t seed : tcfg.seeds) {
    const fs::path dir = root / ("seed_" + std::to_string(seed));
    if (write) fs::create_directories(dir);
    DcsStModel model(mcfg, seed);
    Trainer trainer(model, tcfg, data.labeled, data.unlabeled, seed);
    const fs::path state = dir / "state.bin";
    if (write && options.resume && fs::exists(state)) {
      trainer.load_state(state.string());
      log("seed " + std::to_string(seed) + ": resumed at epoch " + std::to_string(trainer.epoch()));
    }
    while (!trainer.done()) {
      if (budget == 0) {
        result.complete = false;
        log("stopping early at seed " + std::to_string(seed) + " epoch " + std::to_string(trainer.epoch()));
        return result;
      }
      const EpochRecord rec = trainer.run_epoch();
      --budget;
      log("seed " + std::to_string(seed) + " " + rec.to_json());
      if (write) {
        write_file(dir / "epochs.jsonl", history_jsonl(trainer.history()));
        const bool last = trainer.done();
        if (last || (tcfg.checkpoint_every > 0 && trainer.epoch() % tcfg.checkpoint_every == 0)) {
          trainer.save_state(state.string());
        }
      }
    }

    RunResult run;
    run.seed = seed;
    run.history = trainer.history();
    run.test_probs = predict_probs(model, data.test, tcfg.eval_batch_size);
    Warnings warnings;
    run.metrics = evaluate_predictions(run.test_probs.data(), data.test.labels, mcfg.num_classes, &warnings);
    run.metrics.seed = seed;
    for (const auto& w : warnings) log("warning: " + w);
    if (write) {
      write_file(dir / "epochs.jsonl", history_jsonl(run.history));
      save_checkpoint((dir / "checkpoint.dcsm").string(), model,
                      checkpoint_metadata(data.manifest.classes, seed, cfg), stats_tensors(data.stats));
      write_file(dir / "predictions.jsonl", predictions_jsonl(data.test.ids, data.test.labels, run.test_probs));
      const ConfusionMatrix cm = ConfusionMatrix::from_predictions(
          data.test.labels, argmax_rows(run.test_probs), mcfg.num_classes);
      write_file(dir / "confusion.csv", cm.to_csv(data.manifest.classes));
      write_file(dir / "metrics.json", metrics_json(run.metrics));
    }
    result.runs.push_back(std::move(run));
  }

  std::vector<RunMetrics> metrics;
  for (const auto& r : result.runs) metrics.push_back(r.metrics);
  result.report = aggregate_runs(std::move(metrics));
  if (write) {
    write_file(root / "report.json", report_json(result.report));
    write_file(root / "report.txt", report_table(result.report));
  }
  return result;
}

EvalResult evaluate_checkpoint(const Checkpoint& ckpt, const DatasetManifest& manifest,
                               const std::vector<std::string>& ids) {
  std::string names;
  for (std::size_t i = 0; i < manifest.classes.size(); ++i) {
    if (i) names += ",";
    names += manifest.classes[i];
  }
  for (const auto& [k, v] : ckpt.metadata) {
    if (k == "classes" && v != names) {
      throw VersionError("checkpoint classes [" + v + "] do not match manifest classes [" + names + "]");
    }
  }
  if (ckpt.config.num_classes != manifest.num_classes()) {
    throw VersionError("checkpoint has " + std::to_string(ckpt.config.num_classes) +
                       " classes, manifest has " + std::to_string(manifest.num_classes()));
  }
  if (ids.empty()) throw ConfigError("no ids to evaluate");
  const DcsStModel model = model_from_checkpoint(ckpt);
  TensorDataset ds = load_images(manifest, ids, ckpt.config.image_size);
  ds.images = normalize_channels(ds.images, stats_from_tensors(ckpt.extra));
  EvalResult r;
  r.probs = predict_probs(model, ds, 64);
  r.ids = ds.ids;
  r.truth = ds.labels;
  r.metrics = evaluate_predictions(r.probs.data(), r.truth, manifest.num_classes(), &r.warnings);
  r.confusion = ConfusionMatrix::from_predictions(r.truth, argmax_rows(r.probs), manifest.num_classes());
  return r;
}

std::string eval_report_json(const EvalResult& result, const std::vector<std::string>& classes) {
  nlohmann::ordered_json j;
  j["num_samples"] = result.ids.size();
  j["classes"] = classes;
  j["auc_roc"] = result.metrics.auc_roc;
  j["balanced_accuracy"] = result.metrics.balanced_accuracy;
  j["f1"] = result.metrics.f1;
  j["cohens_kappa"] = result.metrics.cohens_kappa;
  std::vector<std::vector<std::uint64_t>> cm(classes.size());
  for (std::size_t t = 0; t < classes.size(); ++t) {
    for (std::size_t p = 0; p < classes.size(); ++p) cm[t].push_back(result.confusion.at(t, p));
  }
  j["confusion"] = cm;
  j["warnings"] = result.warnings;
  return j.dump(2) + "\n";
}

}  // namespace dcsst
