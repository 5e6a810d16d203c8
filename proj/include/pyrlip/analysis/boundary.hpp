#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pyrlip/core/error.hpp"
#include "pyrlip/data/synth.hpp"
#include "pyrlip/model/consensus.hpp"

namespace pyrlip::analysis {

using data::BoundaryVector;

/// B_att[t] = 1 iff the head-averaged attention weight of frame t is >= alpha.
inline BoundaryVector learned_boundary(const model::AttentionRecord& a, double alpha = 0.01) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("learned_boundary: alpha must lie in (0, 1)");
  if (a.heads == 0 || a.weights.size() != a.heads * a.frames)
    throw ShapeError("learned_boundary: attention record holds " + std::to_string(a.weights.size()) + " weights for " +
                     std::to_string(a.heads) + " heads x " + std::to_string(a.frames) + " frames");
  BoundaryVector b(a.frames, 0);
  for (std::size_t t = 0; t < a.frames; ++t) {
    double s = 0.0;
    for (std::size_t n = 0; n < a.heads; ++n) s += a.weight(n, t);
    b[t] = s / static_cast<double>(a.heads) >= alpha ? 1 : 0;
  }
  return b;
}

/// The average consensus treats every frame as relevant.
inline BoundaryVector boundary_average(std::size_t frames) {
  if (frames == 0) throw ConfigError("boundary_average: T must be >= 1");
  return BoundaryVector(frames, 1);
}

/// Levenshtein distance with unit costs, two-row dynamic program.
inline std::size_t edit_distance(const BoundaryVector& a, const BoundaryVector& b) {
  if (a.size() != b.size())
    throw ShapeError("edit_distance: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()) + " differ");
  const std::size_t n = a.size();
  std::vector<std::size_t> prev(n + 1), cur(n + 1);
  for (std::size_t j = 0; j <= n; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= n; ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1] ? 1 : 0)});
    std::swap(prev, cur);
  }
  return prev[n];
}

inline std::size_t hamming(const BoundaryVector& a, const BoundaryVector& b) {
  if (a.size() != b.size())
    throw ShapeError("hamming: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()) + " differ");
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i] ? 1 : 0;
  return d;
}

/// What the analyses need to know about one evaluated test sample.
struct SampleOutcome {
  std::size_t index = 0;
  std::size_t label = 0, predicted = 0;
  bool correct = false;
  BoundaryVector truth;
  BoundaryVector learned; // B_att, or B_avg for models without attention
  std::size_t viseme_count = 0;
};

struct BoundaryAnalysis {
  std::size_t index = 0;
  BoundaryVector learned, truth;
  std::size_t distance = 0, hamming = 0;
  bool correct = false;
};

inline std::vector<BoundaryAnalysis> analyze_boundaries(const std::vector<SampleOutcome>& samples) {
  std::vector<BoundaryAnalysis> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.push_back({s.index, s.learned, s.truth, edit_distance(s.learned, s.truth), hamming(s.learned, s.truth), s.correct});
  return out;
}

struct DistanceRow {
  std::size_t distance = 0, count = 0, correct = 0;
  double hamming_sum = 0.0;

  double accuracy() const { return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0; }
  double mean_hamming() const { return count ? hamming_sum / static_cast<double>(count) : 0.0; }
};

/// Histogram over edit distance, ascending.
inline std::vector<DistanceRow> boundary_histogram(const std::vector<BoundaryAnalysis>& rows) {
  if (rows.empty()) throw ConfigError("boundary_report: no records");
  std::map<std::size_t, DistanceRow> by;
  for (const auto& r : rows) {
    auto& d = by[r.distance];
    d.distance = r.distance;
    ++d.count;
    d.correct += r.correct ? 1 : 0;
    d.hamming_sum += static_cast<double>(r.hamming);
  }
  std::vector<DistanceRow> out;
  for (auto& [k, v] : by) out.push_back(v);
  return out;
}

struct CategoryRow {
  std::size_t viseme_count = 0, count = 0, correct = 0;
  double accuracy() const { return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0; }
};

/// Nine rows, one per viseme count 1..9 (empty categories included).
inline std::vector<CategoryRow> viseme_category_accuracy(const std::vector<SampleOutcome>& samples) {
  std::vector<CategoryRow> rows(9);
  for (std::size_t i = 0; i < 9; ++i) rows[i].viseme_count = i + 1;
  for (const auto& s : samples) {
    if (s.viseme_count < 1 || s.viseme_count > 9)
      throw ConfigError("viseme_category_accuracy: sample " + std::to_string(s.index) + " has unknown category " +
                        std::to_string(s.viseme_count));
    auto& r = rows[s.viseme_count - 1];
    ++r.count;
    r.correct += s.correct ? 1 : 0;
  }
  return rows;
}

inline double mean_distance(const std::vector<BoundaryAnalysis>& rows) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += static_cast<double>(r.distance);
  return s / static_cast<double>(rows.size());
}

// ---------------------------------------------------------------- CSV

inline std::string fmt_real(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

/// Lines of "# key = value" that head every CSV.
inline std::string csv_preamble(const std::vector<std::pair<std::string, std::string>>& echo) {
  std::string s;
  for (const auto& [k, v] : echo) s += "# " + k + " = " + v + "\n";
  return s;
}

inline std::string boundary_csv(const std::vector<DistanceRow>& rows,
                                const std::vector<std::pair<std::string, std::string>>& echo = {}) {
  std::string s = csv_preamble(echo) + "distance,count,accuracy,mean_hamming\n";
  for (const auto& r : rows)
    s += std::to_string(r.distance) + "," + std::to_string(r.count) + "," + fmt_real(r.accuracy()) + "," +
         fmt_real(r.mean_hamming()) + "\n";
  return s;
}

inline std::string category_csv(const std::vector<CategoryRow>& rows,
                                const std::vector<std::pair<std::string, std::string>>& echo = {}) {
  std::string s = csv_preamble(echo) + "viseme_count,count,accuracy\n";
  for (const auto& r : rows)
    s += std::to_string(r.viseme_count) + "," + std::to_string(r.count) + "," + fmt_real(r.accuracy()) + "\n";
  return s;
}

inline std::string boundary_string(const BoundaryVector& b) {
  std::string s;
  for (auto v : b) s.push_back(v ? '1' : '0');
  return s;
}

inline std::string sample_csv(const std::vector<SampleOutcome>& samples,
                              const std::vector<std::pair<std::string, std::string>>& echo = {}) {
  std::string s = csv_preamble(echo) + "index,label,predicted,correct,viseme_count,truth,learned,distance,hamming\n";
  for (const auto& o : samples)
    s += std::to_string(o.index) + "," + std::to_string(o.label) + "," + std::to_string(o.predicted) + "," +
         (o.correct ? "1" : "0") + "," + std::to_string(o.viseme_count) + "," + boundary_string(o.truth) + "," +
         boundary_string(o.learned) + "," + std::to_string(edit_distance(o.learned, o.truth)) + "," +
         std::to_string(hamming(o.learned, o.truth)) + "\n";
  return s;
}

} // namespace pyrlip::analysis
