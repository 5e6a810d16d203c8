#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pyrlip/core/error.hpp"
#include "pyrlip/core/rng.hpp"

namespace pyrlip {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class Tape;

/// Dense row-major array of doubles. Storage is shared and treated as
/// immutable once a tensor has been handed to an op; copies are cheap.
/// A tensor attached to a Tape carries the id of the node that produced it.
class Tensor {
public:
  Tensor() : Tensor(Shape{1}, std::vector<double>{0.0}) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(data))) {
    for (auto e : shape_)
      if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + to_string(shape_));
    if (numel(shape_) != data_->size())
      throw ShapeError("shape " + to_string(shape_) + " needs " + std::to_string(numel(shape_)) +
                       " values, got " + std::to_string(data_->size()));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

  static Tensor full(Shape shape, double value) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }

  static Tensor randn(Shape shape, Rng& rng, double mean = 0.0, double std = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.normal(mean, std);
    return Tensor(std::move(shape), std::move(v));
  }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
    return Tensor(std::move(shape), std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_->size(); }

  std::span<const double> data() const { return *data_; }
  const std::vector<double>& values() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return (*data_)[0];
  }

  /// Writable view. Detaches from any tape and from shared storage, so
  /// other holders of the old buffer keep seeing the old values.
  std::span<double> mutable_data() {
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
    tape_ = nullptr;
    node_ = -1;
    return *data_;
  }

  /// Same values, no tape link.
  Tensor detach() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
  }

  bool attached() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  bool all_finite() const {
    for (double v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_values(const Tensor& other) const { return shape_ == other.shape_ && *data_ == *other.data_; }

  std::shared_ptr<const std::vector<double>> storage() const { return data_; }

private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

/// Spec-style constructors.
inline Tensor build(Shape shape, std::vector<double> data) { return Tensor(std::move(shape), std::move(data)); }
inline Tensor zeros(Shape shape) { return Tensor::zeros(std::move(shape)); }
inline Tensor randn(Shape shape, Rng& rng, double mean = 0.0, double std = 1.0) {
  return Tensor::randn(std::move(shape), rng, mean, std);
}

} // namespace pyrlip
