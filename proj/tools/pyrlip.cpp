#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pyrlip/analysis/boundary.hpp"
#include "pyrlip/analysis/records.hpp"
#include "pyrlip/check/gradsuite.hpp"
#include "pyrlip/config/experiment.hpp"
#include "pyrlip/data/dataset.hpp"
#include "pyrlip/nn/cost.hpp"
#include "pyrlip/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace pyrlip;

namespace {

enum Exit { ok = 0, check_failed = 1, usage = 2, numeric = 3 };

config::ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  config::ExperimentConfig cfg = path.empty() ? config::ExperimentConfig{} : config::load_file(path);
  for (const auto& o : overrides) config::apply_override(cfg, o);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write '" + path.string() + "'");
  f << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct SynthArgs {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

int cmd_synth(const SynthArgs& a) {
  auto cfg = load_config(a.spec, a.overrides);
  if (a.seed) cfg.data.seed = *a.seed;
  const auto ds = data::synth_generate(cfg.data);
  data::write_dataset(ds, a.out);
  std::cout << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test samples to " << a.out
            << " (seed " << cfg.data.seed << ")\n";
  return ok;
}

struct TrainArgs {
  std::string config, out = "run";
  std::vector<std::string> overrides;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  auto cfg = load_config(a.config, a.overrides);
  if (cfg.train.checkpoint.empty()) cfg.train.checkpoint = (fs::path(a.out) / "checkpoint.vst").string();
  if (cfg.train.report.empty()) cfg.train.report = (fs::path(a.out) / "report.json").string();
  for (const auto* p : {&cfg.train.checkpoint, &cfg.train.report})
    if (fs::path(*p).has_parent_path()) fs::create_directories(fs::path(*p).parent_path());
  data::Dataset ds;
  if (cfg.train.data_dir.empty()) {
    ds = data::synth_generate(cfg.data);
  } else {
    ds = data::read_dataset(cfg.train.data_dir);
    cfg.data = ds.spec;
  }
  const auto r = train::train(cfg, ds, a.quiet ? nullptr : &std::cerr);
  std::cout << "best test accuracy " << r.best.test_accuracy << " at epoch " << r.best.epoch << ", train accuracy "
            << r.final_train_accuracy << "\ncheckpoint " << cfg.train.checkpoint << "\nreport " << cfg.train.report << "\n";
  return ok;
}

struct EvalArgs {
  std::string checkpoint, data, split = "test", records;
};

int cmd_eval(const EvalArgs& a) {
  const auto ck = train::load_checkpoint(a.checkpoint);
  const auto ds = data::read_dataset(a.data);
  const auto& samples = a.split == "train" ? ds.train : ds.test;
  const model::LipReadingModel m(ck.config.model_config());
  const auto r = train::evaluate(m, ck.params, samples);
  auto echo = config::to_pairs(ck.config);
  echo.emplace_back("eval.checkpoint", a.checkpoint);
  echo.emplace_back("eval.data", a.data);
  echo.emplace_back("eval.split", a.split);
  const std::string out = a.records.empty() ? (fs::path(a.checkpoint).parent_path() / "records.json").string() : a.records;
  write_text(out, analysis::records_to_json(r, a.split, echo).dump() + "\n");
  std::cout << "accuracy " << r.accuracy() << " (" << r.correct << "/" << r.total << ")\nrecords " << out << "\n";
  return ok;
}

struct AnalyzeArgs {
  std::string records, truths, out;
  double alpha = 0.01;
};

int cmd_analyze(const AnalyzeArgs& a) {
  const auto doc = nlohmann::json::parse(read_text(a.records));
  const auto r = analysis::records_from_json(doc);
  const auto ds = data::read_dataset(a.truths);
  const std::string split = doc.value("split", "test");
  const auto outcomes = analysis::join_truth(r, split == "train" ? ds.train : ds.test, a.alpha);

  std::vector<std::pair<std::string, std::string>> echo;
  for (const auto& [k, v] : doc.at("config").items()) echo.emplace_back(k, v.get<std::string>());
  echo.emplace_back("analyze.alpha", config::detail::fmt_double(a.alpha));
  echo.emplace_back("analyze.records", a.records);

  const auto rows = analysis::analyze_boundaries(outcomes);
  const fs::path out(a.out);
  write_text(out / "boundary_distance.csv", analysis::boundary_csv(analysis::boundary_histogram(rows), echo));
  write_text(out / "viseme_categories.csv", analysis::category_csv(analysis::viseme_category_accuracy(outcomes), echo));
  write_text(out / "samples.csv", analysis::sample_csv(outcomes, echo));
  std::cout << "mean edit distance " << analysis::mean_distance(rows) << " over " << rows.size() << " samples\nwrote "
            << (out / "boundary_distance.csv").string() << ", " << (out / "viseme_categories.csv").string() << ", "
            << (out / "samples.csv").string() << "\n";
  return ok;
}

struct GradArgs {
  std::string scope = "layer";
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  bool broken = false;
  double tolerance = 1e-4;
  double eps = 1e-5;
  std::string only;
};

int cmd_gradcheck(const GradArgs& a) {
  if (a.scope != "layer" && a.scope != "model" && a.scope != "all")
    throw ConfigError("--scope must be layer, model or all");
  const auto missing = check::uncovered_ops(check::grad_cases(a.broken));
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckOptions opt;
  opt.eps = a.eps;
  auto reports = check::run_grad_suite(a.scope, a.trials, a.seed, a.broken, opt);
  if (!a.only.empty())
    std::erase_if(reports, [&](const check::CaseReport& r) { return r.name != a.only; });
  bool pass = missing.empty();
  std::printf("%-20s %-6s %6s %8s %7s %12s  %-6s %s\n", "name", "scope", "trials", "checked", "kinks", "max_rel_err",
              "status", "worst (analytic vs numeric)");
  for (const auto& r : reports) {
    const bool good = r.max_rel_error < a.tolerance && r.checked > 0;
    pass = pass && good;
    std::printf("%-20s %-6s %6zu %8zu %7zu %12.3e  %-6s %.6e vs %.6e\n", r.name.c_str(), r.scope.c_str(), r.trials,
                r.checked, r.skipped_kinks, r.max_rel_error, good ? "ok" : "FAIL", r.worst_analytic, r.worst_numeric);
  }
  for (const auto& m : missing) std::printf("%-20s op     no gradient case registered  FAIL\n", m.c_str());
  std::printf("%s in %.1fs\n", pass ? "all gradients within tolerance" : "gradient check FAILED",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return pass ? ok : check_failed;
}

struct BenchArgs {
  std::string layer = "standard", shape = "8,16,24,24";
  std::size_t cout = 0, repeat = 3;
};

int cmd_bench(const BenchArgs& a) {
  const auto dims = config::detail::parse_list(a.shape);
  if (dims.size() != 4) throw ConfigError("--shape expects B,C,H,W");
  const std::size_t b = dims[0], c = dims[1], h = dims[2], w = dims[3];
  const std::size_t cout = a.cout ? a.cout : c;
  Rng rng(7);
  const Tensor x = Tensor::randn({b, c, h, w}, rng);
  std::function<Tensor()> run;
  std::uint64_t closed = 0;
  std::vector<Tensor> weights;
  if (a.layer == "standard") {
    weights.push_back(Tensor::randn({cout, c, 3, 3}, rng));
    run = [&] { return conv2d(x, weights[0], std::nullopt, 1, 1); };
    closed = nn::conv2d_macs(b, c, cout, 3, h, w);
  } else if (a.layer == "pyconv" || a.layer == "hpconv") {
    const auto cfg = nn::PyConvConfig::equal_split(cout, {3, 5, 7, 9}, 1, a.layer == "hpconv");
    for (std::size_t i = 0; i < cfg.levels; ++i) weights.push_back(Tensor::randn(cfg.weight_shape(c, i), rng));
    run = [&, cfg] { return nn::hpconv_forward(cfg, x, weights); };
    closed = nn::pyconv_macs(cfg, c, b, h, w);
  } else {
    throw ConfigError("--layer must be standard, pyconv or hpconv");
  }
  double best = 1e300;
  std::uint64_t counted = 0;
  for (std::size_t i = 0; i < std::max<std::size_t>(1, a.repeat); ++i) {
    conv_mac_counter() = 0;
    const auto t0 = std::chrono::steady_clock::now();
    run();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    counted = conv_mac_counter();
  }
  const bool match = counted == closed;
  std::printf("layer %s  input %zux%zux%zux%zu  C_out %zu\n", a.layer.c_str(), b, c, h, w, cout);
  std::printf("counted MACs     %llu\nclosed-form MACs %llu  %s\n", static_cast<unsigned long long>(counted),
              static_cast<unsigned long long>(closed), match ? "match" : "MISMATCH");
  std::printf("FLOPs (2 x MACs) %llu\nbest time %.6fs  %.3f GMAC/s\n", static_cast<unsigned long long>(2 * closed), best,
              static_cast<double>(counted) / best / 1e9);
  return match ? ok : check_failed;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pyramidal-convolution lip reading on synthetic clips"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset (train.vst, test.vst)");
  synth->add_option("--spec", sa.spec, "Config file; its data.* keys describe the dataset");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--seed", sa.seed, "Dataset seed (overrides data.seed)");
  synth->add_option("--override", sa.overrides, "key=value, applied after the file");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a model; writes a checkpoint and a JSON run report");
  trn->add_option("--config", ta.config, "Experiment config file");
  trn->add_option("--override", ta.overrides, "key=value, applied after the file");
  trn->add_option("--out", ta.out, "Directory for the checkpoint and report unless the config names them");
  trn->add_flag("--quiet", ta.quiet, "No per-epoch progress on stderr");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint; writes per-sample records");
  ev->add_option("--checkpoint", ea.checkpoint)->required();
  ev->add_option("--data", ea.data, "Dataset directory")->required();
  ev->add_option("--split", ea.split)->check(CLI::IsMember({"train", "test"}));
  ev->add_option("--records", ea.records, "Output JSON (default: records.json beside the checkpoint)");

  AnalyzeArgs aa;
  auto* an = app.add_subcommand("analyze", "Boundary and viseme-category reports from eval records");
  an->add_option("--records", aa.records)->required();
  an->add_option("--truths", aa.truths, "Dataset directory the records were evaluated on")->required();
  an->add_option("--out", aa.out, "Output directory for the CSV reports")->required();
  an->add_option("--alpha", aa.alpha, "Attention threshold for the learned boundary");

  GradArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op and layer");
  gc->add_option("--scope", ga.scope)->check(CLI::IsMember({"layer", "model", "all"}));
  gc->add_option("--trials", ga.trials, "Random configurations per case");
  gc->add_option("--seed", ga.seed);
  gc->add_option("--tolerance", ga.tolerance);
  gc->add_option("--eps", ga.eps, "Central-difference step");
  gc->add_option("--only", ga.only, "Report a single case");
  gc->add_flag("--broken-fixture", ga.broken)->group("");

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "Count multiply-adds of one layer and time it");
  be->add_option("--layer", ba.layer)->check(CLI::IsMember({"standard", "pyconv", "hpconv"}));
  be->add_option("--shape", ba.shape, "B,C,H,W");
  be->add_option("--cout", ba.cout, "Output channels (default C)");
  be->add_option("--repeat", ba.repeat);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*trn) return cmd_train(ta);
    if (*ev) return cmd_eval(ea);
    if (*an) return cmd_analyze(aa);
    if (*gc) return cmd_gradcheck(ga);
    if (*be) return cmd_bench(ba);
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return numeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return usage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return usage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return usage;
  }
  return usage;
}
