#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "pyrlip/core/error.hpp"
#include "pyrlip/nn/params.hpp"

namespace pyrlip::train {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 0;
  // evaluate on the test split every n epochs (the last epoch always is)
  std::size_t eval_every = 1;
  // fraction of the train split held out for checkpoint selection (0: select on test)
  double holdout = 0.0;
  // stop once eval-mode train accuracy and the evaluated selection accuracy
  // both reach these (0 disables); the schedule still spans all epochs
  double stop_train_accuracy = 0.0;
  double stop_test_accuracy = 0.0;
  std::string checkpoint;   // empty: keep the checkpoint in memory only
  std::string report;       // empty: no report file
  std::string data_dir;     // empty: generate the dataset in memory

  void validate() const {
    if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("train: Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
    if (eval_every == 0) throw ConfigError("train: eval_every must be >= 1");
    if (!(holdout >= 0.0 && holdout < 1.0)) throw ConfigError("train: holdout must lie in [0, 1)");
    if (!(stop_train_accuracy >= 0.0 && stop_train_accuracy <= 1.0) || !(stop_test_accuracy >= 0.0 && stop_test_accuracy <= 1.0))
      throw ConfigError("train: stop accuracies must lie in [0, 1]");
  }
};

/// Cosine decay from lr at step 0 to 0 at step `total`.
inline double cosine_lr(double lr, std::size_t step, std::size_t total) {
  if (total == 0) return lr;
  return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

struct AdamHyper {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
};

struct AdamState {
  std::size_t step = 0;
  std::map<std::string, std::vector<double>> m, v;
};

/// One Adam step with bias correction and decoupled weight decay
/// (p <- p * (1 - lr * wd) before the Adam delta). Parameters without a
/// gradient entry are left alone, decay included.
inline void adam_step(nn::ParamStore& store, const std::map<std::string, Tensor>& grads, AdamState& state, double lr,
                      const AdamHyper& h) {
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    if (!store.trainable(name)) throw ConfigError("adam: '" + name + "' is not trainable");
    Tensor& p = store.get_mut(name);
    if (g.shape() != p.shape())
      throw ShapeError("adam: gradient of '" + name + "' has shape " + to_string(g.shape()) + ", parameter has " +
                       to_string(p.shape()));
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    } else if (m.size() != p.size()) {
      throw ShapeError("adam: state of '" + name + "' does not match the parameter size");
    }
    auto pd = p.mutable_data();
    const double decay = 1.0 - lr * h.weight_decay;
    for (std::size_t i = 0; i < pd.size(); ++i) {
      const double gi = g[i];
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      pd[i] = pd[i] * decay - lr * mhat / (std::sqrt(vhat) + h.eps);
    }
  }
}

} // namespace pyrlip::train
