#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pyrlip/analysis/boundary.hpp"
#include "pyrlip/data/synth.hpp"
#include "pyrlip/train/trainer.hpp"

namespace pyrlip::analysis {

/// Per-sample evaluation records as JSON; `echo` is the effective config.
inline nlohmann::json records_to_json(const train::EvalResult& r, const std::string& split,
                                      const std::vector<std::pair<std::string, std::string>>& echo) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& e : r.records) {
    nlohmann::json j = {{"index", e.index}, {"label", e.label}, {"predicted", e.predicted}, {"correct", e.correct}};
    if (e.attention)
      j["attention"] = {{"heads", e.attention->heads}, {"frames", e.attention->frames}, {"weights", e.attention->weights}};
    recs.push_back(std::move(j));
  }
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : echo) cfg[k] = v;
  return {{"format", "pyrlip-eval-records"},
          {"split", split},
          {"accuracy", r.accuracy()},
          {"correct", r.correct},
          {"total", r.total},
          {"config", cfg},
          {"records", recs}};
}

inline train::EvalResult records_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != "pyrlip-eval-records")
    throw ConfigError("records: not a pyrlip-eval-records document");
  train::EvalResult r;
  for (const auto& e : j.at("records")) {
    train::EvalRecord rec;
    rec.index = e.at("index").get<std::size_t>();
    rec.label = e.at("label").get<std::size_t>();
    rec.predicted = e.at("predicted").get<std::size_t>();
    rec.correct = e.at("correct").get<bool>();
    if (e.contains("attention")) {
      model::AttentionRecord a;
      a.heads = e["attention"].at("heads").get<std::size_t>();
      a.frames = e["attention"].at("frames").get<std::size_t>();
      a.weights = e["attention"].at("weights").get<std::vector<double>>();
      rec.attention = std::move(a);
    }
    r.correct += rec.correct ? 1 : 0;
    r.records.push_back(std::move(rec));
  }
  r.total = r.records.size();
  return r;
}

/// Joins evaluation records with the ground truth of the evaluated split.
/// Records with attention get B_att, the others B_avg.
inline std::vector<SampleOutcome> join_truth(const train::EvalResult& r, const std::vector<data::SampleRecord>& truth,
                                             double alpha = 0.01) {
  if (r.records.size() != truth.size())
    throw ConfigError("analyze: " + std::to_string(r.records.size()) + " records for " + std::to_string(truth.size()) +
                      " ground-truth samples");
  std::vector<SampleOutcome> out;
  for (const auto& e : r.records) {
    if (e.index >= truth.size()) throw ConfigError("analyze: record index " + std::to_string(e.index) + " out of range");
    const auto& s = truth[e.index];
    if (s.label != e.label)
      throw ConfigError("analyze: record " + std::to_string(e.index) + " has label " + std::to_string(e.label) +
                        ", the data says " + std::to_string(s.label));
    SampleOutcome o;
    o.index = e.index;
    o.label = e.label;
    o.predicted = e.predicted;
    o.correct = e.correct;
    o.truth = s.boundary;
    o.viseme_count = s.viseme_count;
    o.learned = e.attention ? learned_boundary(*e.attention, alpha) : boundary_average(s.boundary.size());
    if (o.learned.size() != o.truth.size()) throw ConfigError("analyze: record and truth disagree on T");
    out.push_back(std::move(o));
  }
  return out;
}

} // namespace pyrlip::analysis
