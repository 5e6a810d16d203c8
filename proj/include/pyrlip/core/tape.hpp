#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pyrlip/core/tensor.hpp"

namespace pyrlip {

/// Gradient buffers of a node's inputs, handed to its backward rule.
/// buffer(i) is empty when input i does not need a gradient.
class GradSink {
public:
  explicit GradSink(std::vector<std::span<double>> buffers) : buffers_(std::move(buffers)) {}
  std::span<double> buffer(std::size_t input) const { return buffers_.at(input); }
  bool wants(std::size_t input) const { return !buffers_.at(input).empty(); }

private:
  std::vector<std::span<double>> buffers_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out, const GradSink& sink)>;

/// Reverse-mode tape. Node ids are assigned in recording order, so every
/// input id is smaller than its consumer's id and backward() can sweep ids
/// downward once.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf whose gradient will be collected.
  Tensor watch(const Tensor& t) {
    Tensor out = t.detach();
    out.tape_ = this;
    out.node_ = push_node("leaf", {}, nullptr, out.storage());
    return out;
  }

  /// Records an op result. Inputs not attached to this tape get no gradient.
  Tensor record(const char* op, Tensor result, std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
    std::vector<int> ids;
    ids.reserve(inputs.size());
    for (const Tensor* in : inputs) ids.push_back(in->tape_ == this ? in->node_ : -1);
    result.tape_ = this;
    result.node_ = push_node(op, std::move(ids), std::move(backward), result.storage());
    return result;
  }

  /// Same as record() for a runtime-sized input list.
  Tensor record_many(const char* op, Tensor result, const std::vector<Tensor>& inputs, BackwardFn backward) {
    std::vector<int> ids;
    ids.reserve(inputs.size());
    for (const Tensor& in : inputs) ids.push_back(in.tape_ == this ? in.node_ : -1);
    result.tape_ = this;
    result.node_ = push_node(op, std::move(ids), std::move(backward), result.storage());
    return result;
  }

  void backward(const Tensor& loss) {
    if (loss.tape_ != this || loss.node_ < 0) throw TapeError("backward() on a tensor detached from this tape");
    if (loss.size() != 1) throw TapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
    for (auto& g : grads_) g.clear();
    grads_[static_cast<std::size_t>(loss.node_)].assign(1, 1.0);
    for (int id = loss.node_; id >= 0; --id) {
      const auto& node = nodes_[static_cast<std::size_t>(id)];
      auto& gout = grads_[static_cast<std::size_t>(id)];
      if (gout.empty() || !node.backward) continue;
      std::vector<std::span<double>> bufs;
      bufs.reserve(node.inputs.size());
      for (int in : node.inputs) {
        if (in < 0) {
          bufs.emplace_back();
          continue;
        }
        auto& g = grads_[static_cast<std::size_t>(in)];
        if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(in)].value->size(), 0.0);
        bufs.emplace_back(g);
      }
      node.backward(gout, GradSink(std::move(bufs)));
    }
  }

  /// Gradient of the last backward() with respect to t (zeros if unreached).
  Tensor grad(const Tensor& t) const {
    if (t.tape_ != this) throw TapeError("grad() of a tensor not recorded on this tape");
    const auto& g = grads_[static_cast<std::size_t>(t.node_)];
    if (g.empty()) return Tensor::zeros(t.shape());
    return Tensor(t.shape(), g);
  }

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<int>& inputs_of(std::size_t id) const { return nodes_.at(id).inputs; }

  /// First recorded node whose value holds a NaN or Inf.
  std::optional<std::size_t> first_nonfinite() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      for (double v : *nodes_[i].value)
        if (!std::isfinite(v)) return i;
    return std::nullopt;
  }

  /// Running hash over the activation patterns of non-smooth ops (relu
  /// masks, max positions). Two evaluations with equal hashes lie in the
  /// same smooth piece of the function.
  std::uint64_t kink_hash() const { return kink_hash_; }
  void mix_kink(std::uint64_t v) { kink_hash_ = Rng::mix(kink_hash_ ^ v); }

private:
  struct Node {
    std::string op;
    std::vector<int> inputs;
    BackwardFn backward;
    std::shared_ptr<const std::vector<double>> value;
  };

  int push_node(const char* op, std::vector<int> inputs, BackwardFn fn, std::shared_ptr<const std::vector<double>> value) {
    nodes_.push_back(Node{op, std::move(inputs), std::move(fn), std::move(value)});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::uint64_t kink_hash_ = 0;
};

namespace detail {

/// The tape shared by the attached inputs, or nullptr if none is attached.
inline Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->attached()) continue;
    if (tape && tape != t->tape()) throw TapeError("op inputs are recorded on different tapes");
    tape = t->tape();
  }
  return tape;
}

/// Wraps an op result: records it when any input is on a tape. The backward
/// rule is only built (and its captures only copied) in that case.
template <class MakeBackward>
Tensor finish(const char* op, Tensor result, std::initializer_list<const Tensor*> inputs, MakeBackward&& make_backward) {
  Tape* tape = common_tape(inputs);
  if (!tape) return result;
  return tape->record(op, std::move(result), inputs, BackwardFn(make_backward()));
}

} // namespace detail
} // namespace pyrlip
