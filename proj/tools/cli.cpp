// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcsst/error.hpp"
#include "dcsst/experiment.hpp"
#include "dcsst/gradcheck_suite.hpp"

namespace fs = std::filesystem;

namespace dcsst::cli {
namespace {

// DCSST_VERBOSE=0 silences per-epoch progress lines.
bool verbose() {
  const char* v = std::getenv("DCSST_VERBOSE");
  return v == nullptr || std::string(v) != "0";
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<std::string> read_ids(const std::string& path) {
  std::vector<std::string> ids;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty() && line.front() != '#') ids.push_back(line);
  }
  return ids;
}

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

struct SynthArgs {
  SynthConfig cfg;
  std::string out;
};

struct SplitArgs {
  std::string manifest, out;
  double train_frac = 0.8, labeled_frac = 0.05;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::string config, split, manifest, out, ablation;
  std::vector<std::uint64_t> seeds;
  bool supervised_only = false, resume = false;
  std::size_t stop_after = 0;
};

struct EvalArgs {
  std::string checkpoint, manifest, ids, split, pool = "test", out;
};

struct GradArgs {
  std::string op, model;
  std::size_t trials = 3;
  std::uint64_t seed = 0;
  bool inject_fault = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  out << synth_generate(a.cfg, a.out) << "\n";
  return kOk;
}

int cmd_split(const SplitArgs& a, std::ostream& out) {
  const DatasetManifest manifest = load_manifest(a.manifest);
  DatasetSplit split = stratified_split(manifest, a.train_frac, a.labeled_frac, a.seed);
  split.manifest = absolute(a.manifest);
  write_split(a.out, split);
  out << format_audit(split);
  return kOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config);
  if (!a.ablation.empty()) cfg.ablation = parse_ablation(a.ablation);
  if (a.supervised_only) cfg.supervised_only = true;
  if (!a.seeds.empty()) cfg.train.seeds = a.seeds;
  if (!a.split.empty()) cfg.split = a.split;
  if (cfg.split.empty()) throw ConfigError("no split given (--split or the config's split key)");
  cfg.split = absolute(cfg.split);
  const DatasetSplit split = read_split(cfg.split);
  if (!a.manifest.empty()) cfg.manifest = a.manifest;
  else if (cfg.manifest.empty()) cfg.manifest = split.manifest;
  if (cfg.manifest.empty()) throw ConfigError("no manifest given and the split does not name one");
  cfg.manifest = absolute(cfg.manifest);

  const fs::path root(a.out);
  const fs::path resolved = root / "run_config.txt";
  if (a.resume && fs::exists(resolved) && read_text(resolved.string()) != run_config_text(cfg)) {
    throw ConfigError("--resume with a config that differs from " + resolved.string());
  }

  const DatasetManifest manifest = load_manifest(cfg.manifest);
  const ExperimentData data = load_experiment_data(manifest, split, cfg.model.image_size);
  ExperimentOptions opts;
  opts.out_dir = a.out;
  opts.resume = a.resume;
  if (a.stop_after > 0) opts.stop_after = a.stop_after;
  if (verbose()) opts.log = [&out](const std::string& line) { out << line << "\n" << std::flush; };
  const ExperimentResult result = run_experiment(cfg, data, opts);
  if (!result.complete) {
    out << "interrupted; rerun with --resume to continue\n";
    return kOk;
  }
  out << report_table(result.report);
  return kOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const DatasetManifest manifest = load_manifest(a.manifest);
  std::vector<std::string> ids;
  if (!a.ids.empty()) {
    ids = read_ids(a.ids);
  } else {
    const DatasetSplit split = read_split(a.split);
    if (a.pool == "labeled") ids = split.labeled;
    else if (a.pool == "unlabeled") ids = split.unlabeled;
    else ids = split.test;
  }
  const EvalResult r = evaluate_checkpoint(ckpt, manifest, ids);
  fs::path report(a.out);
  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  write_text(report, eval_report_json(r, manifest.classes));
  fs::path csv = report;
  csv.replace_extension(".confusion.csv");
  write_text(csv, r.confusion.to_csv(manifest.classes));
  for (const auto& w : r.warnings) out << "warning: " << w << "\n";
  out << std::fixed << std::setprecision(4) << "samples           " << r.ids.size() << "\n"
      << "auc_roc           " << r.metrics.auc_roc << "\n"
      << "balanced_accuracy " << r.metrics.balanced_accuracy << "\n"
      << "f1                " << r.metrics.f1 << "\n"
      << "cohens_kappa      " << r.metrics.cohens_kappa << "\n";
  return kOk;
}

void print_check(std::ostream& out, const CheckReport& r) {
  std::ostringstream err;
  err << std::scientific << std::setprecision(3) << r.worst_rel_error;
  out << std::left << std::setw(28) << r.name << " worst_rel_err " << err.str() << "  "
      << (r.passed ? "ok  " : "FAIL") << "  " << r.worst_shapes << "\n";
}

int cmd_gradcheck(const GradArgs& a, std::ostream& out) {
  GradcheckOptions opts;
  opts.inject_fault = a.inject_fault;
  std::vector<CheckReport> reports;
  if (!a.model.empty()) {
    reports.push_back(run_model_check(a.model, a.seed, opts));
  } else if (!a.op.empty()) {
    reports.push_back(run_op_check(find_op_check(a.op), a.trials, a.seed, opts));
  } else {
    for (const auto& c : op_checks()) reports.push_back(run_op_check(c, a.trials, a.seed, opts));
    reports.push_back(run_model_check("micro", a.seed, opts));
  }
  bool ok = true;
  for (const auto& r : reports) {
    print_check(out, r);
    ok = ok && r.passed;
  }
  return ok ? kOk : kVerification;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic cross-scale windowed transformer: data, training, evaluation"};
  app.name("dcsst");
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "Write a synthetic image dataset and its manifest");
  s->add_option("--classes", synth.cfg.num_classes, "Number of classes")->check(CLI::Range(2, 4));
  s->add_option("--per-class", synth.cfg.per_class, "Images per class")->check(CLI::PositiveNumber);
  s->add_option("--size", synth.cfg.image_size, "Image side in pixels")->check(CLI::Range(4, 4096));
  s->add_option("--seed", synth.cfg.seed, "Random seed");
  s->add_option("--overlap", synth.cfg.overlap, "Class overlap, 0 is separable")->check(CLI::Range(0.0, 10.0));
  s->add_option("--out", synth.out, "Output directory")->required();

  SplitArgs split;
  auto* sp = app.add_subcommand("split", "Stratified labeled/unlabeled/test split");
  sp->add_option("--manifest", split.manifest, "Manifest file or class-per-folder directory")->required();
  sp->add_option("--train-frac", split.train_frac, "Training fraction per class")->check(CLI::Range(0.0, 1.0));
  sp->add_option("--labeled-frac", split.labeled_frac, "Labeled fraction of the training pool")
      ->check(CLI::Range(0.0, 1.0));
  sp->add_option("--seed", split.seed, "Random seed");
  sp->add_option("--out", split.out, "Output split JSON")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train one model per seed and report test metrics");
  t->add_option("--config", train.config, "Run config (key = value)")->required()->check(CLI::ExistingFile);
  t->add_option("--split", train.split, "Split JSON");
  t->add_option("--manifest", train.manifest, "Manifest; defaults to the one recorded in the split");
  t->add_option("--out", train.out, "Run directory")->required();
  auto* abl = t->add_option("--ablation", train.ablation, "full, no-dw, no-cs or baseline")
                  ->check(CLI::IsMember({"full", "no-dw", "no-cs", "baseline"}));
  t->add_flag("--supervised-only", train.supervised_only, "Labeled data only (tau = 1)")->excludes(abl);
  t->add_option("--seeds", train.seeds, "Override the config's seed list")->delimiter(',');
  t->add_flag("--resume", train.resume, "Continue from saved trainer states");
  t->add_option("--stop-after", train.stop_after, "Stop after N epochs (interruption drill)")->group("");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  e->add_option("--manifest", eval.manifest, "Manifest")->required();
  auto* ids = e->add_option("--ids", eval.ids, "File with one sample id per line")->check(CLI::ExistingFile);
  auto* spl = e->add_option("--split", eval.split, "Split JSON (with --pool)")->check(CLI::ExistingFile);
  e->add_option("--pool", eval.pool, "labeled, unlabeled or test")
      ->check(CLI::IsMember({"labeled", "unlabeled", "test"}));
  e->add_option("--out", eval.out, "Report JSON; the confusion matrix goes next to it")->required();
  ids->excludes(spl);

  GradArgs grad;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  auto* op = g->add_option("--op", grad.op, "Single operation");
  g->add_option("--model", grad.model, "Model preset")->check(CLI::IsMember({"micro"}))->excludes(op);
  g->add_option("--trials", grad.trials, "Random shapes per operation")->check(CLI::PositiveNumber);
  g->add_option("--seed", grad.seed, "Random seed");
  g->add_flag("--inject-fault", grad.inject_fault, "Corrupt analytic gradients (harness self-test)");
  g->add_flag_callback("--list", [&out] {
    for (const auto& c : op_checks()) out << c.name << "\n";
    throw CLI::Success();
  }, "List operation names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex, out, err);
    return kUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (sp->parsed()) return cmd_split(split, out);
    if (t->parsed()) return cmd_train(train, out);
    if (e->parsed()) {
      if (eval.ids.empty() && eval.split.empty()) {
        err << "eval: one of --ids or --split is required\n";
        return kUsage;
      }
      return cmd_eval(eval, out);
    }
    if (g->parsed()) return cmd_gradcheck(grad, out);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace dcsst::cli
