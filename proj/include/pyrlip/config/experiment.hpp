#pragma once

#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pyrlip/data/synth.hpp"
#include "pyrlip/model/model.hpp"
#include "pyrlip/train/optim.hpp"

namespace pyrlip::config {

/// Dataset spec, model and training settings of one run. Model geometry
/// (vocabulary, T, H, W) is taken from the data section.
struct ExperimentConfig {
  data::DatasetSpec data;
  model::ModelConfig model;
  train::TrainConfig train;

  model::ModelConfig model_config() const {
    model::ModelConfig m = model;
    m.vocab = data.vocab;
    m.frames = data.frames;
    m.height = data.height;
    m.width = data.width;
    return m;
  }

  void validate() const {
    data.validate();
    model_config().validate();
    train.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  const auto t = trim(s);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || p != t.data() + t.size() || t.empty())
    throw ConfigError("expected a non-negative integer, got '" + s + "'");
  return v;
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const auto t = trim(s);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || p != t.data() + t.size() || t.empty())
    throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  const auto t = trim(s);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(item));
  return out;
}

inline std::array<std::size_t, 3> parse_triple(const std::string& s) {
  const auto v = parse_list(s);
  if (v.size() != 3) throw ConfigError("expected three comma-separated integers, got '" + s + "'");
  return {v[0], v[1], v[2]};
}

inline std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <class C>
std::string fmt_list(const C& c) {
  std::string s;
  for (auto v : c) {
    if (!s.empty()) s += ",";
    s += std::to_string(v);
  }
  return s;
}

inline std::string fmt_bool(bool b) { return b ? "true" : "false"; }

} // namespace detail

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

/// Every accepted key, in the order they are echoed.
inline const std::vector<Field>& fields() {
  using namespace detail;
  using E = ExperimentConfig;
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    auto uint_field = [&f](std::string key, auto member) {
      f.push_back({std::move(key), [member](const E& c) { return std::to_string(member(const_cast<E&>(c))); },
                   [member](E& c, const std::string& v) { member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_uint(v)); }});
    };
    auto double_field = [&f](std::string key, auto member) {
      f.push_back({std::move(key), [member](const E& c) { return fmt_double(member(const_cast<E&>(c))); },
                   [member](E& c, const std::string& v) { member(c) = parse_double(v); }});
    };
    auto bool_field = [&f](std::string key, auto member) {
      f.push_back({std::move(key), [member](const E& c) { return fmt_bool(member(const_cast<E&>(c))); },
                   [member](E& c, const std::string& v) { member(c) = parse_bool(v); }});
    };
    auto list_field = [&f](std::string key, auto member) {
      f.push_back({std::move(key), [member](const E& c) { return fmt_list(member(const_cast<E&>(c))); },
                   [member](E& c, const std::string& v) { member(c) = parse_list(v); }});
    };
    auto triple_field = [&f](std::string key, auto member) {
      f.push_back({std::move(key), [member](const E& c) { return fmt_list(member(const_cast<E&>(c))); },
                   [member](E& c, const std::string& v) { member(c) = parse_triple(v); }});
    };
    auto string_field = [&f](std::string key, auto member) {
      f.push_back({std::move(key), [member](const E& c) { return member(const_cast<E&>(c)); },
                   [member](E& c, const std::string& v) { member(c) = trim(v); }});
    };

    uint_field("data.vocab", [](E& c) -> auto& { return c.data.vocab; });
    list_field("data.viseme_counts", [](E& c) -> auto& { return c.data.viseme_counts; });
    uint_field("data.train_per_word", [](E& c) -> auto& { return c.data.train_per_word; });
    uint_field("data.test_per_word", [](E& c) -> auto& { return c.data.test_per_word; });
    uint_field("data.frames", [](E& c) -> auto& { return c.data.frames; });
    uint_field("data.height", [](E& c) -> auto& { return c.data.height; });
    uint_field("data.width", [](E& c) -> auto& { return c.data.width; });
    double_field("data.noise", [](E& c) -> auto& { return c.data.noise; });
    uint_field("data.glyphs", [](E& c) -> auto& { return c.data.glyphs; });
    uint_field("data.seed", [](E& c) -> auto& { return c.data.seed; });

    f.push_back({"model.second_conv", [](const E& c) { return nn::to_string(c.model.frontend.second_conv); },
                 [](E& c, const std::string& v) { c.model.frontend.second_conv = nn::parse_second_conv(trim(v)); }});
    f.push_back({"model.consensus", [](const E& c) { return model::to_string(c.model.consensus); },
                 [](E& c, const std::string& v) { c.model.consensus = model::parse_consensus(trim(v)); }});
    f.push_back({"model.boundary", [](const E& c) { return model::to_string(c.model.boundary); },
                 [](E& c, const std::string& v) { c.model.boundary = model::parse_boundary(trim(v)); }});
    triple_field("model.stem_kernel", [](E& c) -> auto& { return c.model.frontend.stem_kernel; });
    triple_field("model.stem_stride", [](E& c) -> auto& { return c.model.frontend.stem_stride; });
    triple_field("model.stem_pad", [](E& c) -> auto& { return c.model.frontend.stem_pad; });
    list_field("model.stage_widths", [](E& c) -> auto& { return c.model.frontend.stage_widths; });
    list_field("model.stage_strides", [](E& c) -> auto& { return c.model.frontend.stage_strides; });
    uint_field("model.blocks_per_stage", [](E& c) -> auto& { return c.model.frontend.blocks_per_stage; });
    list_field("model.pyramid_kernels", [](E& c) -> auto& { return c.model.frontend.pyramid_kernels; });
    uint_field("model.backend_blocks", [](E& c) -> auto& { return c.model.backend.blocks; });
    list_field("model.branch_kernels", [](E& c) -> auto& { return c.model.backend.branch_kernels; });
    uint_field("model.hidden", [](E& c) -> auto& { return c.model.backend.hidden; });
    double_field("model.dropout", [](E& c) -> auto& { return c.model.backend.dropout; });
    uint_field("model.heads", [](E& c) -> auto& { return c.model.attention.heads; });
    uint_field("model.key_dim", [](E& c) -> auto& { return c.model.attention.key_dim; });
    uint_field("model.value_dim", [](E& c) -> auto& { return c.model.attention.value_dim; });
    bool_field("model.sum_query", [](E& c) -> auto& { return c.model.attention.sum_query; });
    bool_field("model.zero_init_attention", [](E& c) -> auto& { return c.model.zero_init_attention; });
    uint_field("model.seed", [](E& c) -> auto& { return c.model.seed; });

    uint_field("train.epochs", [](E& c) -> auto& { return c.train.epochs; });
    uint_field("train.batch_size", [](E& c) -> auto& { return c.train.batch_size; });
    double_field("train.lr", [](E& c) -> auto& { return c.train.lr; });
    double_field("train.weight_decay", [](E& c) -> auto& { return c.train.weight_decay; });
    double_field("train.beta1", [](E& c) -> auto& { return c.train.beta1; });
    double_field("train.beta2", [](E& c) -> auto& { return c.train.beta2; });
    double_field("train.adam_eps", [](E& c) -> auto& { return c.train.adam_eps; });
    uint_field("train.seed", [](E& c) -> auto& { return c.train.seed; });
    uint_field("train.eval_every", [](E& c) -> auto& { return c.train.eval_every; });
    double_field("train.holdout", [](E& c) -> auto& { return c.train.holdout; });
    double_field("train.stop_train_accuracy", [](E& c) -> auto& { return c.train.stop_train_accuracy; });
    double_field("train.stop_test_accuracy", [](E& c) -> auto& { return c.train.stop_test_accuracy; });
    string_field("train.checkpoint", [](E& c) -> auto& { return c.train.checkpoint; });
    string_field("train.report", [](E& c) -> auto& { return c.train.report; });
    string_field("train.data_dir", [](E& c) -> auto& { return c.train.data_dir; });
    return f;
  }();
  return all;
}

inline const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

/// Sets one key; unknown keys and bad values raise ConfigError.
inline void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown key '" + key + "'");
  try {
    f->set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

/// Applies "key=value".
inline void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set_value(cfg, detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

/// Parses "key = value" lines on top of cfg. '#' starts a comment; a key
/// may appear once per text. Errors name the source and line.
inline void apply_text(ExperimentConfig& cfg, const std::string& text, const std::string& source = "<config>") {
  std::stringstream in(text);
  std::string line;
  std::set<std::string> seen;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + detail::trim(line) + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError(where + "key '" + key + "' given twice");
    try {
      set_value(cfg, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

inline ExperimentConfig load_file(const std::string& path, ExperimentConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  apply_text(base, ss.str(), path);
  return base;
}

/// Effective configuration as an ordered key -> value list.
inline std::vector<std::pair<std::string, std::string>> to_pairs(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

inline std::string to_text(const ExperimentConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : to_pairs(cfg)) s += k + " = " + v + "\n";
  return s;
}

inline ExperimentConfig from_pairs(const std::map<std::string, std::string>& kv) {
  ExperimentConfig cfg;
  for (const auto& [k, v] : kv) set_value(cfg, k, v);
  return cfg;
}

} // namespace pyrlip::config
