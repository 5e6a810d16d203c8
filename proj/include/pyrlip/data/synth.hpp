#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "pyrlip/core/error.hpp"
#include "pyrlip/core/rng.hpp"
#include "pyrlip/core/tensor.hpp"

namespace pyrlip::data {

using BoundaryVector = std::vector<std::uint8_t>;

/// One synthetic clip.
struct SampleRecord {
  Tensor sequence; // [T x H x W], pixels in [0, 1]
  std::size_t label = 0;
  BoundaryVector boundary; // one contiguous run of 1s
  std::size_t viseme_count = 0;
};

struct DatasetSpec {
  std::size_t vocab = 10;
  // viseme count per word; empty cycles 1..9
  std::vector<std::size_t> viseme_counts{1, 2, 3, 4, 5, 6, 7, 8, 9, 9};
  std::size_t train_per_word = 60;
  std::size_t test_per_word = 20;
  std::size_t frames = 12, height = 24, width = 24;
  double noise = 0.05;
  // size of the glyph alphabet words are spelled with (glyph 0, the neutral
  // mouth, is extra)
  std::size_t glyphs = 12;
  std::uint64_t seed = 0;

  std::size_t viseme_count(std::size_t word) const {
    return viseme_counts.empty() ? word % 9 + 1 : viseme_counts.at(word);
  }

  /// Frames covered by a word of v visemes: two per glyph, compressed to
  /// at most T - 2 so that the neutral context never disappears.
  std::size_t word_frames(std::size_t v) const { return std::min(2 * v, frames - 2); }

  void validate() const {
    if (vocab == 0) throw ConfigError("data: vocab must be >= 1");
    if (frames < 4) throw ConfigError("data: frames must be >= 4");
    if (height < 4 || width < 4) throw ConfigError("data: height and width must be >= 4");
    if (!(noise >= 0.0)) throw ConfigError("data: noise must be >= 0");
    if (train_per_word == 0 && test_per_word == 0) throw ConfigError("data: no samples requested");
    if (!viseme_counts.empty() && viseme_counts.size() != vocab)
      throw ConfigError("data: viseme_counts has " + std::to_string(viseme_counts.size()) + " entries for " +
                        std::to_string(vocab) + " words");
    std::size_t max_v = 0;
    for (std::size_t w = 0; w < vocab; ++w) {
      const std::size_t v = viseme_count(w);
      if (v == 0) throw ConfigError("data: viseme counts must be >= 1");
      if (v > frames - 2)
        throw ConfigError("data: word " + std::to_string(w) + " has " + std::to_string(v) +
                          " visemes, more than T - 2 = " + std::to_string(frames - 2) + " frames can hold");
      max_v = std::max(max_v, v);
    }
    if (max_v > glyphs)
      throw ConfigError("data: " + std::to_string(max_v) + " visemes need at least that many glyphs, have " +
                        std::to_string(glyphs));
  }
};

/// Mouth-aperture glyph g rendered as a filled ellipse with a one-pixel soft
/// edge. Glyph 0 is the neutral (nearly closed) mouth; glyphs 1.. vary width
/// and opening on a grid so that every pair differs in shape.
inline std::vector<double> render_glyph(std::size_t g, std::size_t h, std::size_t w) {
  const double s = static_cast<double>(std::min(h, w)) / 24.0;
  double a = 0.0, b = 0.0;
  if (g == 0) {
    a = 7.0 * s;
    b = 0.6 * s;
  } else {
    const std::size_t i = g - 1;
    a = (3.0 + 2.0 * static_cast<double>(i % 4)) * s;
    b = (1.8 + 2.2 * static_cast<double>((i / 4) % 4)) * s;
    // rotate through vertical offsets once the grid is exhausted
    if (i >= 16) a += 1.0 * s;
  }
  const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
  std::vector<double> img(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = (static_cast<double>(y) - cy) / b, dx = (static_cast<double>(x) - cx) / a;
      // signed distance proxy in pixels from the ellipse rim
      const double r = std::sqrt(dx * dx + dy * dy);
      const double edge = (r - 1.0) * std::min(a, b);
      const double inside = std::clamp(0.5 - edge, 0.0, 1.0);
      img[y * w + x] = 0.15 + 0.7 * inside;
    }
  return img;
}

/// Words, their glyph spellings, and both splits.
struct Dataset {
  DatasetSpec spec;
  std::vector<std::vector<std::size_t>> words; // glyph ids per word
  std::vector<SampleRecord> train, test;
};

/// Distinct glyph sequences, one per word; a word of v visemes uses v
/// distinct glyphs.
inline std::vector<std::vector<std::size_t>> make_words(const DatasetSpec& spec) {
  Rng rng = Rng(spec.seed).fork(1);
  std::set<std::vector<std::size_t>> seen;
  std::vector<std::vector<std::size_t>> words;
  for (std::size_t w = 0; w < spec.vocab; ++w) {
    const std::size_t v = spec.viseme_count(w);
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt == 10000) throw ConfigError("data: cannot spell " + std::to_string(spec.vocab) + " distinct words");
      std::vector<std::size_t> pool(spec.glyphs);
      for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i + 1;
      for (std::size_t i = 0; i < v; ++i) std::swap(pool[i], pool[i + rng.uniform_int(pool.size() - i)]);
      pool.resize(v);
      if (seen.insert(pool).second) {
        words.push_back(std::move(pool));
        break;
      }
    }
  }
  return words;
}

/// One sample of `word` drawn from `rng`: offset, then pixel noise.
inline SampleRecord make_sample(const DatasetSpec& spec, const std::vector<std::size_t>& spelling,
                                const std::vector<std::vector<double>>& glyph_images, std::size_t label, Rng& rng) {
  const std::size_t t = spec.frames, hw = spec.height * spec.width, v = spelling.size();
  const std::size_t len = spec.word_frames(v);
  const std::size_t offset = rng.uniform_int(t - len + 1);
  SampleRecord s;
  s.label = label;
  s.viseme_count = v;
  s.boundary.assign(t, 0);
  std::vector<double> pix(t * hw);
  for (std::size_t f = 0; f < t; ++f) {
    std::size_t glyph = 0;
    if (f >= offset && f < offset + len) {
      s.boundary[f] = 1;
      glyph = spelling[(f - offset) * v / len];
    }
    std::copy(glyph_images[glyph].begin(), glyph_images[glyph].end(), pix.begin() + static_cast<std::ptrdiff_t>(f * hw));
  }
  if (spec.noise > 0.0)
    for (auto& p : pix) p = std::clamp(p + rng.normal(0.0, spec.noise), 0.0, 1.0);
  s.sequence = Tensor({t, spec.height, spec.width}, std::move(pix));
  return s;
}

/// Deterministic in (spec, spec.seed). Samples are ordered word-major.
inline Dataset synth_generate(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.words = make_words(spec);
  std::vector<std::vector<double>> glyph_images;
  for (std::size_t g = 0; g <= spec.glyphs; ++g) glyph_images.push_back(render_glyph(g, spec.height, spec.width));
  const Rng root(spec.seed);
  auto split = [&](std::uint64_t salt, std::size_t per_word, std::vector<SampleRecord>& out) {
    const Rng stream = root.fork(salt);
    for (std::size_t w = 0; w < spec.vocab; ++w)
      for (std::size_t i = 0; i < per_word; ++i) {
        Rng rng = stream.fork(w * 1000003 + i);
        out.push_back(make_sample(spec, ds.words[w], glyph_images, w, rng));
      }
  };
  split(2, spec.train_per_word, ds.train);
  split(3, spec.test_per_word, ds.test);
  return ds;
}

} // namespace pyrlip::data
