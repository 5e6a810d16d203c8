#pragma once

#include <map>
#include <string>
#include <vector>

#include "pyrlip/core/norm.hpp"
#include "pyrlip/core/tape.hpp"
#include "pyrlip/core/tensor.hpp"

namespace pyrlip::nn {

/// Named model state. Trainable entries are parameters; the rest are
/// buffers (batch-norm running statistics). Keys are stable path strings
/// such as "frontend.stage1.block0.conv1.weight"; iteration order is the
/// lexical key order.
class ParamStore {
public:
  struct Entry {
    Tensor value;
    bool trainable = true;
  };

  void add(const std::string& name, Tensor value, bool trainable = true) {
    if (entries_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    entries_.emplace(name, Entry{value.detach(), trainable});
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor& get(const std::string& name) const { return entry(name).value; }
  Tensor& get_mut(const std::string& name) { return entry(name).value; }
  bool trainable(const std::string& name) const { return entry(name).trainable; }

  std::vector<std::string> names(bool trainable_only = false) const {
    std::vector<std::string> out;
    for (const auto& [k, e] : entries_)
      if (!trainable_only || e.trainable) out.push_back(k);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [k, e] : entries_)
      if (e.trainable) n += e.value.size();
    return n;
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }

private:
  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

/// Per-forward-pass state: which store to read, the tape (if gradients are
/// wanted), the mode, and the dropout stream.
class Context {
public:
  Context(ParamStore& store, Tape* tape, NormMode mode, Rng* dropout_rng = nullptr)
      : store_(store), tape_(tape), mode_(mode), rng_(dropout_rng) {}

  /// Parameter value; attached to the tape (once per context) when one is set.
  Tensor param(const std::string& name) {
    auto it = watched_.find(name);
    if (it != watched_.end()) return it->second;
    if (!tape_ || !store_.trainable(name)) return store_.get(name);
    return watched_.emplace(name, tape_->watch(store_.get(name))).first->second;
  }

  /// Serves `value` (typically attached to some tape) for `name` from now on.
  void bind(const std::string& name, const Tensor& value) {
    if (value.shape() != store_.get(name).shape())
      throw ShapeError("bind: '" + name + "' expects shape " + to_string(store_.get(name).shape()) + ", got " +
                       to_string(value.shape()));
    watched_.insert_or_assign(name, value);
  }

  Tensor& buffer(const std::string& name) { return store_.get_mut(name); }

  NormMode mode() const { return mode_; }
  bool training() const { return mode_ == NormMode::train; }
  Tape* tape() const { return tape_; }
  Rng* rng() const { return rng_; }
  ParamStore& store() { return store_; }

  /// Attached parameter tensors used so far, keyed by name.
  const std::map<std::string, Tensor>& watched() const { return watched_; }

private:
  ParamStore& store_;
  Tape* tape_;
  NormMode mode_;
  Rng* rng_;
  std::map<std::string, Tensor> watched_;
};

/// He-normal init for a conv or linear weight with the given fan-in.
inline Tensor kaiming(Shape shape, std::size_t fan_in, Rng& rng) {
  return Tensor::randn(std::move(shape), rng, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

/// Registers gamma/beta and running statistics for a batch norm.
inline void add_batchnorm(ParamStore& store, const std::string& prefix, std::size_t channels) {
  store.add(prefix + ".gamma", Tensor::full({channels}, 1.0));
  store.add(prefix + ".beta", Tensor::zeros({channels}));
  store.add(prefix + ".running_mean", Tensor::zeros({channels}), false);
  store.add(prefix + ".running_var", Tensor::full({channels}, 1.0), false);
}

inline Tensor apply_batchnorm(Context& ctx, const std::string& prefix, const Tensor& x) {
  return batchnorm(x, ctx.param(prefix + ".gamma"), ctx.param(prefix + ".beta"), ctx.buffer(prefix + ".running_mean"),
                   ctx.buffer(prefix + ".running_var"), ctx.mode());
}

} // namespace pyrlip::nn
