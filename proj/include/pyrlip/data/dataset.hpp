#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pyrlip/data/container.hpp"
#include "pyrlip/data/synth.hpp"

namespace pyrlip::data {

inline nlohmann::json spec_to_json(const DatasetSpec& s) {
  return {{"vocab", s.vocab},
          {"viseme_counts", s.viseme_counts},
          {"train_per_word", s.train_per_word},
          {"test_per_word", s.test_per_word},
          {"frames", s.frames},
          {"height", s.height},
          {"width", s.width},
          {"noise", s.noise},
          {"glyphs", s.glyphs},
          {"seed", s.seed}};
}

inline DatasetSpec spec_from_json(const nlohmann::json& j) {
  DatasetSpec s;
  s.vocab = j.at("vocab").get<std::size_t>();
  s.viseme_counts = j.at("viseme_counts").get<std::vector<std::size_t>>();
  s.train_per_word = j.at("train_per_word").get<std::size_t>();
  s.test_per_word = j.at("test_per_word").get<std::size_t>();
  s.frames = j.at("frames").get<std::size_t>();
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.noise = j.at("noise").get<double>();
  s.glyphs = j.at("glyphs").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

inline std::string boundary_string(const BoundaryVector& b) {
  std::string s;
  for (auto v : b) s.push_back(v ? '1' : '0');
  return s;
}

inline BoundaryVector parse_boundary_string(const std::string& s) {
  BoundaryVector b;
  for (char c : s) {
    if (c != '0' && c != '1') throw ContainerError(ContainerError::Kind::invalid, "boundary '" + s + "' is not binary");
    b.push_back(c == '1');
  }
  return b;
}

/// One split as a container: "sequences" [N x T x H x W] plus a manifest
/// with labels, boundaries, viseme counts, word spellings and the spec.
inline Container split_to_container(const Dataset& ds, const std::vector<SampleRecord>& split, const std::string& name) {
  const auto& s = ds.spec;
  Container c;
  if (!split.empty()) {
    Record r;
    r.name = "sequences";
    r.shape = {split.size(), s.frames, s.height, s.width};
    r.f64.reserve(numel(r.shape));
    for (const auto& smp : split) r.f64.insert(r.f64.end(), smp.sequence.values().begin(), smp.sequence.values().end());
    c.records.push_back(std::move(r));
  }
  nlohmann::json labels = nlohmann::json::array(), bounds = nlohmann::json::array(), counts = nlohmann::json::array();
  for (const auto& smp : split) {
    labels.push_back(smp.label);
    bounds.push_back(boundary_string(smp.boundary));
    counts.push_back(smp.viseme_count);
  }
  c.manifest = {{"format", "pyrlip-dataset"}, {"split", name}, {"spec", spec_to_json(s)},   {"words", ds.words},
                {"labels", labels},           {"boundaries", bounds}, {"viseme_counts", counts}};
  return c;
}

inline std::vector<SampleRecord> split_from_container(const Container& c, DatasetSpec* spec_out = nullptr,
                                                      std::vector<std::vector<std::size_t>>* words_out = nullptr) {
  const auto& m = c.manifest;
  if (!m.is_object() || m.value("format", "") != "pyrlip-dataset")
    throw ContainerError(ContainerError::Kind::invalid, "manifest does not describe a dataset split");
  const DatasetSpec spec = spec_from_json(m.at("spec"));
  if (spec_out) *spec_out = spec;
  if (words_out) *words_out = m.at("words").get<std::vector<std::vector<std::size_t>>>();
  const auto labels = m.at("labels").get<std::vector<std::size_t>>();
  const auto bounds = m.at("boundaries").get<std::vector<std::string>>();
  const auto counts = m.at("viseme_counts").get<std::vector<std::size_t>>();
  const std::size_t n = labels.size();
  if (bounds.size() != n || counts.size() != n)
    throw ContainerError(ContainerError::Kind::invalid, "manifest arrays disagree in length");
  std::vector<SampleRecord> out;
  if (n == 0) return out;
  const Record& seq = c.get("sequences");
  const Shape want{n, spec.frames, spec.height, spec.width};
  if (seq.dtype != DType::f64 || seq.shape != want)
    throw ContainerError(ContainerError::Kind::invalid, "sequences record has shape " + to_string(seq.shape) +
                                                            ", manifest implies " + to_string(want));
  const std::size_t per = spec.frames * spec.height * spec.width;
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord s;
    s.sequence = Tensor({spec.frames, spec.height, spec.width},
                        std::vector<double>(seq.f64.begin() + static_cast<std::ptrdiff_t>(i * per),
                                            seq.f64.begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
    s.label = labels[i];
    s.boundary = parse_boundary_string(bounds[i]);
    if (s.boundary.size() != spec.frames)
      throw ContainerError(ContainerError::Kind::invalid, "boundary length does not match frames");
    s.viseme_count = counts[i];
    out.push_back(std::move(s));
  }
  return out;
}

/// Writes train.vst and test.vst into dir (created if missing).
inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_container((dir / "train.vst").string(), split_to_container(ds, ds.train, "train"));
  write_container((dir / "test.vst").string(), split_to_container(ds, ds.test, "test"));
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.train = split_from_container(read_container((dir / "train.vst").string()), &ds.spec, &ds.words);
  DatasetSpec test_spec;
  ds.test = split_from_container(read_container((dir / "test.vst").string()), &test_spec);
  if (spec_to_json(test_spec) != spec_to_json(ds.spec))
    throw ContainerError(ContainerError::Kind::invalid, "train.vst and test.vst were generated from different specs");
  return ds;
}

struct Batch {
  Tensor x; // [B x T x H x W]
  std::vector<std::size_t> labels;
  std::vector<BoundaryVector> boundaries;
  std::vector<std::size_t> indices; // positions in the source split
};

/// Batch composition for one epoch. The shuffled order depends only on
/// (seed, epoch); the last batch may be short.
class Batches {
public:
  Batches(const std::vector<SampleRecord>& samples, std::size_t batch_size, bool shuffle, std::uint64_t seed = 0,
          std::uint64_t epoch = 0)
      : samples_(&samples), batch_size_(batch_size) {
    if (samples.empty()) throw ConfigError("batches: dataset is empty");
    if (batch_size == 0) throw ConfigError("batches: batch size must be >= 1");
    order_.resize(samples.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (shuffle) {
      Rng rng = Rng(seed).fork(0x5eed0000ULL + epoch);
      for (std::size_t i = 0; i + 1 < order_.size(); ++i)
        std::swap(order_[i], order_[i + rng.uniform_int(order_.size() - i)]);
    }
  }

  std::size_t size() const { return (order_.size() + batch_size_ - 1) / batch_size_; }
  const std::vector<std::size_t>& order() const { return order_; }

  Batch operator[](std::size_t b) const {
    const std::size_t lo = b * batch_size_, hi = std::min(order_.size(), lo + batch_size_);
    const Shape& fs = (*samples_)[order_[lo]].sequence.shape();
    const std::size_t per = numel(fs);
    Batch out;
    std::vector<double> x;
    x.reserve((hi - lo) * per);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& s = (*samples_)[order_[i]];
      if (s.sequence.shape() != fs) throw ShapeError("batches: samples have different shapes");
      x.insert(x.end(), s.sequence.values().begin(), s.sequence.values().end());
      out.labels.push_back(s.label);
      out.boundaries.push_back(s.boundary);
      out.indices.push_back(order_[i]);
    }
    Shape shape{hi - lo};
    shape.insert(shape.end(), fs.begin(), fs.end());
    out.x = Tensor(std::move(shape), std::move(x));
    return out;
  }

  class iterator {
  public:
    iterator(const Batches* b, std::size_t i) : b_(b), i_(i) {}
    Batch operator*() const { return (*b_)[i_]; }
    iterator& operator++() {
      ++i_;
      return *this;
    }
    bool operator!=(const iterator& o) const { return i_ != o.i_; }

  private:
    const Batches* b_;
    std::size_t i_;
  };

  iterator begin() const { return {this, 0}; }
  iterator end() const { return {this, size()}; }

private:
  const std::vector<SampleRecord>* samples_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
};

} // namespace pyrlip::data
