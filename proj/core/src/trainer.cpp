// SPDX-License-Identifier: Apache-2.0
#include "dcsst/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dcsst/error.hpp"
#include "dcsst/ops.hpp"
#include "dcsst/serialize.hpp"

namespace dcsst {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (epochs == 0) fail("epochs must be positive");
  if (!(initial_lr > 0.0)) fail("initial_lr must be positive");
  if (batch_size == 0 || eval_batch_size == 0) fail("batch sizes must be positive");
  if (!(tau > 0.0 && tau <= 1.0)) fail("tau must be in (0, 1]");
  if (!(pseudo_weight > 0.0 && pseudo_weight <= 1.0)) fail("pseudo_weight must be in (0, 1]");
  if (warmup_epochs > epochs) fail("warmup_epochs must not exceed epochs");
  if (!(consistency_weight >= 0.0)) fail("consistency_weight must be non-negative");
  if (diffusion_steps == 0 || t_max == 0 || t_max > diffusion_steps) {
    fail("need 1 <= t_max <= diffusion_steps");
  }
  if (seeds.empty()) fail("at least one seed is required");
  if (!(scheduler.min_lr_ratio >= 0.0 && scheduler.min_lr_ratio <= 1.0)) {
    fail("min_lr_ratio must be in [0, 1]");
  }
}

bool apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "epochs") cfg.epochs = parse_size(key, value);
  else if (key == "initial_lr") cfg.initial_lr = parse_double(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_size(key, value);
  else if (key == "eval_batch_size") cfg.eval_batch_size = parse_size(key, value);
  else if (key == "tau") cfg.tau = parse_double(key, value);
  else if (key == "pseudo_weight") cfg.pseudo_weight = parse_double(key, value);
  else if (key == "warmup_epochs") cfg.warmup_epochs = parse_size(key, value);
  else if (key == "optimizer") cfg.optimizer.kind = parse_optimizer_kind(value);
  else if (key == "momentum") cfg.optimizer.momentum = parse_double(key, value);
  else if (key == "scheduler") cfg.scheduler.kind = parse_scheduler_kind(value);
  else if (key == "min_lr_ratio") cfg.scheduler.min_lr_ratio = parse_double(key, value);
  else if (key == "step_size") cfg.scheduler.step_size = parse_size(key, value);
  else if (key == "gamma") cfg.scheduler.gamma = parse_double(key, value);
  else if (key == "consistency") cfg.consistency = parse_bool(key, value);
  else if (key == "consistency_weight") cfg.consistency_weight = parse_double(key, value);
  else if (key == "diffusion_steps") cfg.diffusion_steps = parse_size(key, value);
  else if (key == "beta_start") cfg.beta_start = parse_double(key, value);
  else if (key == "beta_end") cfg.beta_end = parse_double(key, value);
  else if (key == "t_max") cfg.t_max = parse_size(key, value);
  else if (key == "seeds") cfg.seeds = parse_u64_list(key, value);
  else if (key == "checkpoint_every") cfg.checkpoint_every = parse_size(key, value);
  else if (key == "log_wall_time") cfg.log_wall_time = parse_bool(key, value);
  else return false;
  return true;
}

KeyValues train_config_entries(const TrainConfig& cfg) {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  std::string seeds;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    if (i) seeds += ",";
    seeds += std::to_string(cfg.seeds[i]);
  }
  return {
      {"epochs", std::to_string(cfg.epochs)},
      {"initial_lr", format_double(cfg.initial_lr)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"eval_batch_size", std::to_string(cfg.eval_batch_size)},
      {"tau", format_double(cfg.tau)},
      {"pseudo_weight", format_double(cfg.pseudo_weight)},
      {"warmup_epochs", std::to_string(cfg.warmup_epochs)},
      {"optimizer", optimizer_kind_name(cfg.optimizer.kind)},
      {"momentum", format_double(cfg.optimizer.momentum)},
      {"scheduler", scheduler_kind_name(cfg.scheduler.kind)},
      {"min_lr_ratio", format_double(cfg.scheduler.min_lr_ratio)},
      {"step_size", std::to_string(cfg.scheduler.step_size)},
      {"gamma", format_double(cfg.scheduler.gamma)},
      {"consistency", b(cfg.consistency)},
      {"consistency_weight", format_double(cfg.consistency_weight)},
      {"diffusion_steps", std::to_string(cfg.diffusion_steps)},
      {"beta_start", format_double(cfg.beta_start)},
      {"beta_end", format_double(cfg.beta_end)},
      {"t_max", std::to_string(cfg.t_max)},
      {"seeds", seeds},
      {"checkpoint_every", std::to_string(cfg.checkpoint_every)},
      {"log_wall_time", b(cfg.log_wall_time)},
  };
}

std::vector<PseudoLabel> pseudo_labels_from_probs(const Tensor& probs, double tau) {
  if (probs.rank() != 2) throw DimensionError("pseudo labels need [N, C] probabilities");
  const std::size_t N = probs.dim(0), C = probs.dim(1);
  const auto p = probs.data();
  std::vector<PseudoLabel> out;
  for (std::size_t i = 0; i < N; ++i) {
    const double* row = p.data() + i * C;
    const auto best = static_cast<std::size_t>(std::max_element(row, row + C) - row);
    if (row[best] > tau) out.push_back({i, static_cast<int>(best), row[best]});
  }
  return out;
}

Tensor predict_probs(const DcsStModel& model, const TensorDataset& data, std::size_t batch_size) {
  NoGradScope no_grad;
  const std::size_t N = data.size(), C = model.config().num_classes;
  Tensor out({std::max<std::size_t>(N, 1), C});
  if (N == 0) return out;
  auto o = out.mutable_data();
  for (std::size_t start = 0; start < N; start += batch_size) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(N, start + batch_size); ++i) rows.push_back(i);
    const Tensor p = softmax(model.classify(data.batch(rows)), 1);
    std::copy(p.data().begin(), p.data().end(), o.begin() + start * C);
  }
  return out;
}

std::vector<PseudoLabel> generate_pseudo_labels(const DcsStModel& model, const TensorDataset& unlabeled,
                                                double tau, std::size_t batch_size) {
  if (unlabeled.empty()) return {};
  return pseudo_labels_from_probs(predict_probs(model, unlabeled, batch_size), tau);
}

std::string EpochRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["labeled_loss"] = labeled_loss;
  j["pseudo_loss"] = pseudo_loss;
  j["pseudo_count"] = pseudo_count;
  if (pseudo_precision) j["pseudo_precision"] = *pseudo_precision;
  j["lr"] = lr;
  j["wall_ms"] = wall_ms;
  return j.dump();
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  return idx;
}

Trainer::Trainer(DcsStModel& model, TrainConfig cfg, const TensorDataset& labeled,
                 const TensorDataset& unlabeled, std::uint64_t seed)
    : model_(model),
      cfg_(std::move(cfg)),
      labeled_(labeled),
      unlabeled_(unlabeled),
      seed_(seed),
      params_(model.parameters()),
      optimizer_(params_, cfg_.optimizer),
      schedule_(NoiseSchedule::linear(cfg_.diffusion_steps, cfg_.beta_start, cfg_.beta_end)),
      shuffle_rng_(make_stream(seed, "shuffle")),
      noise_rng_(make_stream(seed, "diffusion")) {
  cfg_.validate();
  if (labeled_.empty()) throw ConfigError("the labeled training pool is empty");
  model_.set_requires_grad(true);
}

double Trainer::train_step(const Tensor& images, const std::vector<int>& targets, double weight,
                           double lr) {
  optimizer_.zero_grad();
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    const Tensor logits = model_.classify(images);
    if (weight == 1.0) {
      loss = cross_entropy(logits, targets);
    } else {
      const std::vector<double> w(targets.size(), weight);
      loss = cross_entropy(logits, targets, w);
    }
  }
  tape.backward(loss);
  optimizer_.step(lr);
  return loss.item();
}

EpochRecord Trainer::run_epoch() {
  if (done()) throw ContractError("training already finished");
  const auto t0 = std::chrono::steady_clock::now();
  EpochRecord rec;
  rec.epoch = epoch_ + 1;
  rec.lr = scheduled_lr(cfg_.scheduler, cfg_.initial_lr, epoch_, cfg_.epochs);
  const double lr = rec.lr;
  const bool past_warmup = epoch_ >= cfg_.warmup_epochs;

  // The set is rebuilt from scratch every epoch, before any update of this epoch.
  std::vector<PseudoLabel> pseudo;
  if (past_warmup) {
    pseudo = generate_pseudo_labels(model_, unlabeled_, cfg_.tau, cfg_.eval_batch_size);
  }

  const std::size_t B = cfg_.batch_size;
  const std::vector<std::size_t> order = shuffled_indices(labeled_.size(), shuffle_rng_);
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < order.size(); start += B) {
    const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + B)));
    loss_sum += train_step(labeled_.batch(rows), labeled_.batch_labels(rows), 1.0, lr) *
                static_cast<double>(rows.size());
    rec.labeled_samples_used += rows.size();
  }
  rec.labeled_loss = loss_sum / static_cast<double>(order.size());

  rec.pseudo_count = pseudo.size();
  if (!pseudo.empty()) {
    const bool known = std::all_of(pseudo.begin(), pseudo.end(),
                                   [&](const PseudoLabel& p) { return unlabeled_.labels.at(p.index) >= 0; });
    if (known) {
      std::size_t correct = 0;
      for (const auto& p : pseudo) correct += unlabeled_.labels[p.index] == p.label;
      rec.pseudo_precision = static_cast<double>(correct) / static_cast<double>(pseudo.size());
    }
    const std::vector<std::size_t> porder = shuffled_indices(pseudo.size(), shuffle_rng_);
    double psum = 0.0;
    for (std::size_t start = 0; start < porder.size(); start += B) {
      std::vector<std::size_t> rows;
      std::vector<int> targets;
      for (std::size_t i = start; i < std::min(porder.size(), start + B); ++i) {
        rows.push_back(pseudo[porder[i]].index);
        targets.push_back(pseudo[porder[i]].label);
      }
      psum += train_step(unlabeled_.batch(rows), targets, cfg_.pseudo_weight, lr) *
              static_cast<double>(rows.size());
      rec.unlabeled_samples_used += rows.size();
    }
    rec.pseudo_loss = psum / static_cast<double>(pseudo.size());
  }

  if (past_warmup && cfg_.consistency && cfg_.consistency_weight > 0.0 && !unlabeled_.empty()) {
    const std::vector<std::size_t> corder = shuffled_indices(unlabeled_.size(), shuffle_rng_);
    double csum = 0.0;
    const auto classify = [this](const Tensor& x) { return model_.classify(x); };
    for (std::size_t start = 0; start < corder.size(); start += B) {
      const std::vector<std::size_t> rows(corder.begin() + static_cast<std::ptrdiff_t>(start),
                                          corder.begin() + static_cast<std::ptrdiff_t>(std::min(corder.size(), start + B)));
      optimizer_.zero_grad();
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = scale(consistency_loss(classify, unlabeled_.batch(rows), schedule_, cfg_.t_max, noise_rng_),
                     cfg_.consistency_weight);
      }
      tape.backward(loss);
      optimizer_.step(lr);
      csum += loss.item() * static_cast<double>(rows.size());
      rec.unlabeled_samples_used += rows.size();
    }
    rec.consistency_loss = csum / static_cast<double>(corder.size());
  }

  ++epoch_;
  optimizer_.zero_grad();
  if (cfg_.log_wall_time) {
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  history_.push_back(rec);
  return rec;
}

namespace {

constexpr char kStateMagic[4] = {'D', 'C', 'S', 'R'};
constexpr std::uint32_t kStateVersion = 1;

void write_double(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  write_u64(out, bits);
}

double read_double(std::istream& in) {
  const std::uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::string rng_text(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_from_text(Rng& rng, const std::string& text) {
  std::istringstream is(text);
  is >> rng;
  if (!is) throw FormatError("corrupt RNG state in training state file");
}

}  // namespace

void Trainer::save_state(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(kStateMagic, 4);
    write_u32(out, kStateVersion);
    write_u64(out, seed_);
    write_u64(out, epoch_);
    write_named_tensors(out, model_.named_parameters());
    optimizer_.save_state(out);
    write_string(out, rng_text(shuffle_rng_));
    write_string(out, rng_text(noise_rng_));
    write_u64(out, history_.size());
    for (const auto& r : history_) {
      write_u64(out, r.epoch);
      write_double(out, r.labeled_loss);
      write_double(out, r.pseudo_loss);
      write_u64(out, r.pseudo_count);
      write_u8(out, r.pseudo_precision ? 1 : 0);
      write_double(out, r.pseudo_precision.value_or(0.0));
      write_double(out, r.consistency_loss);
      write_double(out, r.lr);
      write_double(out, r.wall_ms);
      write_u64(out, r.labeled_samples_used);
      write_u64(out, r.unlabeled_samples_used);
    }
    if (!out) throw IoError("failed writing training state '" + tmp + "'");
  }
  std::rename(tmp.c_str(), path.c_str());
}

void Trainer::load_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open training state '" + path + "'");
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kStateMagic)) {
    throw FormatError("'" + path + "' is not a training state file");
  }
  if (const auto v = read_u32(in); v != kStateVersion) {
    throw VersionError("training state version " + std::to_string(v) + " is not supported");
  }
  if (read_u64(in) != seed_) throw ConfigError("training state belongs to a different seed");
  const std::uint64_t epoch = read_u64(in);
  if (epoch > cfg_.epochs) throw ConfigError("training state is past the configured epoch count");
  model_.load_parameters(read_named_tensors(in));
  optimizer_.load_state(in);
  rng_from_text(shuffle_rng_, read_string(in));
  rng_from_text(noise_rng_, read_string(in));
  const std::uint64_t n = read_u64(in);
  std::vector<EpochRecord> history;
  for (std::uint64_t i = 0; i < n; ++i) {
    EpochRecord r;
    r.epoch = read_u64(in);
    r.labeled_loss = read_double(in);
    r.pseudo_loss = read_double(in);
    r.pseudo_count = read_u64(in);
    const bool has_precision = read_u8(in) != 0;
    const double precision = read_double(in);
    if (has_precision) r.pseudo_precision = precision;
    r.consistency_loss = read_double(in);
    r.lr = read_double(in);
    r.wall_ms = read_double(in);
    r.labeled_samples_used = read_u64(in);
    r.unlabeled_samples_used = read_u64(in);
    history.push_back(r);
  }
  epoch_ = epoch;
  history_ = std::move(history);
}

std::vector<EpochRecord> train(DcsStModel& model, const TrainConfig& cfg, const TensorDataset& labeled,
                               const TensorDataset& unlabeled, std::uint64_t seed,
                               const std::function<void(const EpochRecord&)>& on_epoch) {
  Trainer trainer(model, cfg, labeled, unlabeled, seed);
  while (!trainer.done()) {
    const EpochRecord rec = trainer.run_epoch();
    if (on_epoch) on_epoch(rec);
  }
  return trainer.history();
}

}  // namespace dcsst
