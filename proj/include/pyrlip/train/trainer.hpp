#pragma once

#include <chrono>
#include <fstream>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pyrlip/config/experiment.hpp"
#include "pyrlip/data/container.hpp"
#include "pyrlip/data/dataset.hpp"
#include "pyrlip/model/model.hpp"
#include "pyrlip/train/optim.hpp"

namespace pyrlip::train {

/// One evaluated sample; `index` is its position in the evaluated split.
struct EvalRecord {
  std::size_t index = 0;
  std::size_t label = 0;
  std::size_t predicted = 0;
  bool correct = false;
  std::optional<model::AttentionRecord> attention;
};

struct EvalResult {
  std::size_t correct = 0, total = 0;
  std::vector<EvalRecord> records;

  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

inline std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t v = logits.dim(1);
  const double* p = logits.data().data() + row * v;
  std::size_t best = 0;
  for (std::size_t i = 1; i < v; ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

/// Raises ShapeError unless every sample fits the model's input geometry
/// and label range.
inline void check_geometry(const model::ModelConfig& cfg, const std::vector<data::SampleRecord>& samples) {
  const Shape want{cfg.frames, cfg.height, cfg.width};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.sequence.shape() != want)
      throw ShapeError("sample " + std::to_string(i) + " has shape " + to_string(s.sequence.shape()) +
                       ", the model expects " + to_string(want));
    if (s.label >= cfg.vocab)
      throw ShapeError("sample " + std::to_string(i) + " has label " + std::to_string(s.label) + " outside a vocabulary of " +
                       std::to_string(cfg.vocab));
    if (s.boundary.size() != cfg.frames)
      throw ShapeError("sample " + std::to_string(i) + " has a boundary of length " + std::to_string(s.boundary.size()));
  }
}

/// Eval-mode top-1 accuracy. Works on a shallow copy of the store, so
/// running statistics are never touched.
inline EvalResult evaluate(const model::LipReadingModel& m, const nn::ParamStore& params,
                           const std::vector<data::SampleRecord>& samples, std::size_t batch_size = 64) {
  check_geometry(m.config(), samples);
  EvalResult r;
  if (samples.empty()) return r;
  nn::ParamStore store = params;
  for (const auto& batch : data::Batches(samples, batch_size, false)) {
    nn::Context ctx(store, nullptr, NormMode::eval);
    const auto out = m.forward(ctx, batch.x, batch.boundaries);
    for (std::size_t b = 0; b < batch.labels.size(); ++b) {
      EvalRecord rec;
      rec.index = batch.indices[b];
      rec.label = batch.labels[b];
      rec.predicted = argmax_row(out.logits, b);
      rec.correct = rec.predicted == rec.label;
      if (!out.attention.empty()) rec.attention = out.attention[b];
      r.correct += rec.correct ? 1 : 0;
      r.records.push_back(std::move(rec));
    }
  }
  r.total = r.records.size();
  return r;
}

// ---------------------------------------------------------------- checkpoints

struct Checkpoint {
  config::ExperimentConfig config;
  nn::ParamStore params;
  std::size_t epoch = 0;
  double test_accuracy = 0.0;
};

inline data::Container checkpoint_container(const Checkpoint& c) {
  data::Container out;
  nlohmann::json trainable = nlohmann::json::array(), cfg = nlohmann::json::object();
  for (const auto& [name, e] : c.params.entries()) {
    out.records.push_back(data::Record::from_tensor(name, e.value));
    if (e.trainable) trainable.push_back(name);
  }
  // output paths are left out so that identical runs give identical bytes
  for (const auto& [k, v] : config::to_pairs(c.config))
    if (k != "train.checkpoint" && k != "train.report") cfg[k] = v;
  out.manifest = {{"format", "pyrlip-checkpoint"},
                  {"config", cfg},
                  {"epoch", c.epoch},
                  {"test_accuracy", c.test_accuracy},
                  {"trainable", trainable}};
  return out;
}

/// Rebuilds a checkpoint; names, shapes and trainability must match what
/// the stored config's model would create.
inline Checkpoint checkpoint_from_container(const data::Container& c) {
  using data::ContainerError;
  const auto& m = c.manifest;
  if (!m.is_object() || m.value("format", "") != "pyrlip-checkpoint")
    throw ContainerError(ContainerError::Kind::invalid, "manifest does not describe a checkpoint");
  Checkpoint ck;
  ck.config = config::from_pairs(m.at("config").get<std::map<std::string, std::string>>());
  ck.epoch = m.at("epoch").get<std::size_t>();
  ck.test_accuracy = m.at("test_accuracy").get<double>();
  const model::LipReadingModel model(ck.config.model_config());
  const nn::ParamStore fresh = model.make_params();
  if (c.records.size() != fresh.entries().size())
    throw ContainerError(ContainerError::Kind::invalid, "checkpoint has " + std::to_string(c.records.size()) +
                                                           " tensors, the model has " + std::to_string(fresh.entries().size()));
  for (const auto& [name, e] : fresh.entries()) {
    if (!c.contains(name)) throw ContainerError(ContainerError::Kind::invalid, "checkpoint lacks '" + name + "'");
    const auto& rec = c.get(name);
    if (rec.dtype != data::DType::f64 || rec.shape != e.value.shape())
      throw ContainerError(ContainerError::Kind::invalid, "'" + name + "' has shape " + to_string(rec.shape) +
                                                             ", the model expects " + to_string(e.value.shape()));
    ck.params.add(name, rec.tensor(), e.trainable);
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  data::write_container(path, checkpoint_container(c));
}

inline Checkpoint load_checkpoint(const std::string& path) { return checkpoint_from_container(data::read_container(path)); }

// ---------------------------------------------------------------- training

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;          // learning rate at the epoch's first step
  double train_loss = 0.0;  // mean over the epoch's batches
  double train_accuracy = 0.0; // train-mode predictions during the epoch
  std::optional<double> test_accuracy;
};

struct TrainResult {
  Checkpoint best;   // parameters at the best test accuracy
  Checkpoint last;   // parameters after the final epoch
  std::vector<EpochStats> epochs;
  double final_train_accuracy = 0.0; // eval mode, parameters after the last epoch
  double wall_time_s = 0.0;
  nlohmann::json report;
};

/// Splits off a held-out slice of the train set for checkpoint selection
/// when train.holdout > 0; otherwise selection uses the test split.
inline std::pair<std::vector<data::SampleRecord>, std::vector<data::SampleRecord>>
split_holdout(const std::vector<data::SampleRecord>& train, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0) return {train, {}};
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng(seed).fork(0x401d);
  for (std::size_t i = 0; i + 1 < order.size(); ++i) std::swap(order[i], order[i + rng.uniform_int(order.size() - i)]);
  const auto n_hold = static_cast<std::size_t>(fraction * static_cast<double>(train.size()));
  std::vector<bool> held(train.size(), false);
  for (std::size_t i = 0; i < n_hold; ++i) held[order[i]] = true;
  std::vector<data::SampleRecord> fit, hold;
  for (std::size_t i = 0; i < train.size(); ++i) (held[i] ? hold : fit).push_back(train[i]);
  return {fit, hold};
}

inline nlohmann::json report_json(const config::ExperimentConfig& cfg, const TrainResult& r,
                                  const std::string& checkpoint_path, std::size_t parameter_count) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    nlohmann::json j = {{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy}};
    j["test_accuracy"] = e.test_accuracy ? nlohmann::json(*e.test_accuracy) : nlohmann::json(nullptr);
    epochs.push_back(std::move(j));
  }
  nlohmann::json echo = nlohmann::json::object();
  for (const auto& [k, v] : config::to_pairs(cfg)) echo[k] = v;
  return {{"format", "pyrlip-run-report"},
          {"config", echo},
          {"parameter_count", parameter_count},
          {"epochs", epochs},
          {"best_epoch", r.best.epoch},
          {"best_test_accuracy", r.best.test_accuracy},
          {"final_train_accuracy", r.final_train_accuracy},
          {"checkpoint", checkpoint_path},
          {"wall_time_s", r.wall_time_s}};
}

/// Adam with a per-step cosine schedule. Deterministic in the config seeds.
/// A non-finite loss aborts with NumericError naming the first op that
/// produced a non-finite value. Writes the best checkpoint and the report
/// when their paths are set.
inline TrainResult train(const config::ExperimentConfig& cfg, const data::Dataset& ds, std::ostream* log = nullptr) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const model::ModelConfig mcfg = cfg.model_config();
  const model::LipReadingModel m(mcfg);
  const auto& tc = cfg.train;
  check_geometry(mcfg, ds.train);
  check_geometry(mcfg, ds.test);
  auto [fit, holdout] = split_holdout(ds.train, tc.holdout, tc.seed);
  const auto& select = holdout.empty() ? ds.test : holdout;
  if (fit.empty()) throw ConfigError("train: no training samples");

  nn::ParamStore store = m.make_params();
  AdamState adam;
  const AdamHyper hyper{tc.beta1, tc.beta2, tc.adam_eps, tc.weight_decay};
  const std::size_t steps_per_epoch = (fit.size() + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = steps_per_epoch * tc.epochs;

  TrainResult result;
  result.best = {cfg, store, 0, -1.0};
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    EpochStats st;
    st.epoch = epoch;
    st.lr = cosine_lr(tc.lr, step, total_steps);
    Rng drop = Rng(tc.seed).fork(0xd40f0000ULL + epoch);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (const auto& batch : data::Batches(fit, tc.batch_size, true, tc.seed, epoch)) {
      Tape tape;
      nn::Context ctx(store, &tape, NormMode::train, &drop);
      const auto out = m.forward(ctx, batch.x, batch.boundaries);
      const Tensor loss = cross_entropy(out.logits, batch.labels);
      if (!std::isfinite(loss.item())) {
        std::string where = "unknown op";
        if (auto id = tape.first_nonfinite()) where = "op '" + tape.op_name(*id) + "' (node " + std::to_string(*id) + ")";
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           "; first non-finite value produced by " + where);
      }
      tape.backward(loss);
      std::map<std::string, Tensor> grads;
      for (const auto& [name, t] : ctx.watched()) grads.emplace(name, tape.grad(t));
      adam_step(store, grads, adam, cosine_lr(tc.lr, step, total_steps), hyper);
      ++step;
      loss_sum += loss.item() * static_cast<double>(batch.labels.size());
      for (std::size_t b = 0; b < batch.labels.size(); ++b) hits += argmax_row(out.logits, b) == batch.labels[b] ? 1 : 0;
    }
    st.train_loss = loss_sum / static_cast<double>(fit.size());
    st.train_accuracy = static_cast<double>(hits) / static_cast<double>(fit.size());
    if (!select.empty() && (epoch % tc.eval_every == 0 || epoch == tc.epochs)) {
      const double acc = evaluate(m, store, select).accuracy();
      st.test_accuracy = acc;
      if (acc > result.best.test_accuracy) result.best = {cfg, store, epoch, acc};
    }
    if (log) {
      *log << "epoch " << epoch << "/" << tc.epochs << "  loss " << st.train_loss << "  train_acc " << st.train_accuracy;
      if (st.test_accuracy) *log << "  eval_acc " << *st.test_accuracy;
      *log << "\n" << std::flush;
    }
    result.epochs.push_back(st);
    if (tc.stop_train_accuracy > 0.0 && st.train_accuracy >= tc.stop_train_accuracy && st.test_accuracy &&
        *st.test_accuracy >= tc.stop_test_accuracy && evaluate(m, store, fit).accuracy() >= tc.stop_train_accuracy)
      break;
  }
  result.last = {cfg, store, result.epochs.back().epoch, result.epochs.back().test_accuracy.value_or(0.0)};
  if (select.empty()) result.best = result.last;
  const model::LipReadingModel eval_model(mcfg);
  result.final_train_accuracy = evaluate(eval_model, result.last.params, fit).accuracy();
  if (!tc.checkpoint.empty()) save_checkpoint(tc.checkpoint, result.best);
  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.report = report_json(cfg, result, tc.checkpoint, store.parameter_count());
  if (!tc.report.empty()) {
    std::ofstream f(tc.report);
    if (!f) throw ConfigError("cannot write report '" + tc.report + "'");
    f << result.report.dump(2) << "\n";
  }
  return result;
}

} // namespace pyrlip::train
