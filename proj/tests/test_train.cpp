#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pyrlip/config/experiment.hpp"
#include "pyrlip/train/trainer.hpp"

using namespace pyrlip;

namespace {

config::ExperimentConfig tiny_config(const std::string& extra = "") {
  config::ExperimentConfig cfg;
  config::apply_text(cfg, R"(
data.vocab = 3
data.viseme_counts = 1,2,3
data.train_per_word = 6
data.test_per_word = 4
data.frames = 6
data.height = 8
data.width = 8
model.stem_kernel = 3,3,3
model.stem_pad = 1,1,1
model.stage_widths = 2,4
model.stage_strides = 1,2
model.blocks_per_stage = 1
model.pyramid_kernels = 3,5
model.backend_blocks = 1
model.branch_kernels = 3,5
model.hidden = 4
model.heads = 2
model.key_dim = 3
model.value_dim = 3
train.batch_size = 5
train.epochs = 3
)", "tiny");
  config::apply_text(cfg, extra, "extra");
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pyrlip_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

} // namespace

TEST(Adam, ZeroGradientOnlyDecays) {
  nn::ParamStore s;
  s.add("p", Tensor({3}, {1.0, -2.0, 0.5}));
  train::AdamState st;
  train::adam_step(s, {{"p", zeros({3})}}, st, 0.1, {0.9, 0.999, 1e-8, 0.01});
  const auto v = s.get("p").values();
  EXPECT_DOUBLE_EQ(v[0], 1.0 * (1 - 0.1 * 0.01));
  EXPECT_DOUBLE_EQ(v[1], -2.0 * (1 - 0.1 * 0.01));
  EXPECT_DOUBLE_EQ(v[2], 0.5 * (1 - 0.1 * 0.01));
}

TEST(Adam, ConstantGradientStepsByLr) {
  // with a constant gradient the bias-corrected moments are g and g^2 at
  // every step, so each step moves by lr * g / (|g| + eps)
  nn::ParamStore s;
  s.add("p", Tensor({2}, {0.0, 0.0}));
  train::AdamState st;
  const double g0 = 3.0, g1 = -0.25, lr = 0.01, eps = 1e-8;
  double e0 = 0, e1 = 0;
  for (int k = 0; k < 5; ++k) {
    train::adam_step(s, {{"p", Tensor({2}, {g0, g1})}}, st, lr, {0.9, 0.999, eps, 0.0});
    e0 -= lr * g0 / (std::fabs(g0) + eps);
    e1 -= lr * g1 / (std::fabs(g1) + eps);
  }
  EXPECT_NEAR(s.get("p")[0], e0, 1e-15);
  EXPECT_NEAR(s.get("p")[1], e1, 1e-15);
  EXPECT_EQ(st.step, 5u);
}

TEST(Adam, MatchesTwoStepHandComputation) {
  nn::ParamStore s;
  s.add("p", Tensor({1}, {1.0}));
  train::AdamState st;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.1, wd = 0.1;
  train::adam_step(s, {{"p", Tensor({1}, {2.0})}}, st, lr, {b1, b2, eps, wd});
  train::adam_step(s, {{"p", Tensor({1}, {-1.0})}}, st, lr, {b1, b2, eps, wd});
  double p = 1.0;
  p = p * (1 - lr * wd) - lr * 1.0 * 2.0 / (2.0 + eps);
  const double m = b1 * (1 - b1) * 2.0 + (1 - b1) * -1.0, v = b2 * (1 - b2) * 4.0 + (1 - b2) * 1.0;
  const double mh = m / (1 - b1 * b1), vh = v / (1 - b2 * b2);
  p = p * (1 - lr * wd) - lr * mh / (std::sqrt(vh) + eps);
  EXPECT_NEAR(s.get("p")[0], p, 1e-14);
}

TEST(Adam, Errors) {
  nn::ParamStore s;
  s.add("p", zeros({2}));
  s.add("stat", zeros({2}), false);
  train::AdamState st;
  EXPECT_THROW(train::adam_step(s, {{"p", zeros({3})}}, st, 0.1, {}), ShapeError);
  EXPECT_THROW(train::adam_step(s, {{"stat", zeros({2})}}, st, 0.1, {}), ConfigError);
}

TEST(Schedule, Cosine) {
  EXPECT_DOUBLE_EQ(train::cosine_lr(0.4, 0, 100), 0.4);
  EXPECT_NEAR(train::cosine_lr(0.4, 50, 100), 0.2, 1e-15);
  EXPECT_NEAR(train::cosine_lr(0.4, 100, 100), 0.0, 1e-15);
  EXPECT_NEAR(train::cosine_lr(0.4, 25, 100), 0.2 * (1 + std::sqrt(0.5)), 1e-15);
  for (std::size_t k = 1; k <= 100; ++k) EXPECT_LE(train::cosine_lr(1.0, k, 100), train::cosine_lr(1.0, k - 1, 100));
}

TEST(Trainer, ZeroLearningRateLeavesWeightsUnchanged) {
  const auto cfg = tiny_config("train.lr = 0\n");
  const auto ds = data::synth_generate(cfg.data);
  const auto r = train::train(cfg, ds);
  const auto init = model::LipReadingModel(cfg.model_config()).make_params();
  for (const auto& name : init.names(true)) EXPECT_TRUE(r.last.params.get(name).same_values(init.get(name))) << name;
  EXPECT_EQ(r.epochs.size(), 3u);
}

TEST(Trainer, DeterministicCheckpointsAndLosses) {
  const auto dir = scratch_dir("train_det");
  auto a = tiny_config("model.consensus = self_attention\n");
  auto b = a;
  a.train.checkpoint = (dir / "a.vst").string();
  b.train.checkpoint = (dir / "b.vst").string();
  const auto ds = data::synth_generate(a.data);
  const auto ra = train::train(a, ds), rb = train::train(b, ds);
  ASSERT_EQ(ra.epochs.size(), rb.epochs.size());
  for (std::size_t i = 0; i < ra.epochs.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(ra.epochs[i].train_loss), std::bit_cast<std::uint64_t>(rb.epochs[i].train_loss));
  EXPECT_EQ(slurp(dir / "a.vst"), slurp(dir / "b.vst"));
  auto c = a;
  c.train.seed = 1;
  EXPECT_NE(train::train(c, ds).epochs[0].train_loss, ra.epochs[0].train_loss);
}

TEST(Trainer, EvaluateIsPure) {
  const auto cfg = tiny_config();
  const auto ds = data::synth_generate(cfg.data);
  const model::LipReadingModel m(cfg.model_config());
  const auto store = m.make_params();
  const auto before = store;
  const auto r1 = train::evaluate(m, store, ds.test), r2 = train::evaluate(m, store, ds.test);
  EXPECT_EQ(r1.correct, r2.correct);
  for (const auto& name : store.names(false)) EXPECT_TRUE(store.get(name).same_values(before.get(name)));
  ASSERT_EQ(r1.records.size(), ds.test.size());
  for (std::size_t i = 0; i < r1.records.size(); ++i) {
    EXPECT_EQ(r1.records[i].index, i);
    EXPECT_EQ(r1.records[i].label, ds.test[i].label);
  }
}

TEST(Trainer, UntrainedAccuracyNearChance) {
  auto cfg = tiny_config("data.test_per_word = 40\n");
  const auto ds = data::synth_generate(cfg.data);
  double total = 0;
  const int seeds = 8;
  for (int s = 0; s < seeds; ++s) {
    cfg.model.seed = static_cast<std::uint64_t>(s);
    const model::LipReadingModel m(cfg.model_config());
    total += train::evaluate(m, m.make_params(), ds.test).accuracy();
  }
  EXPECT_NEAR(total / seeds, 1.0 / 3.0, 0.12);
}

TEST(Trainer, CheckpointRoundTrip) {
  const auto dir = scratch_dir("ckpt");
  auto cfg = tiny_config("model.second_conv = hpconv\nmodel.consensus = self_attention\n");
  cfg.train.checkpoint = (dir / "best.vst").string();
  cfg.train.report = (dir / "report.json").string();
  const auto ds = data::synth_generate(cfg.data);
  const auto r = train::train(cfg, ds);
  const auto back = train::load_checkpoint(cfg.train.checkpoint);
  EXPECT_EQ(back.epoch, r.best.epoch);
  EXPECT_EQ(back.test_accuracy, r.best.test_accuracy);
  for (const auto& name : r.best.params.names(false)) {
    EXPECT_TRUE(back.params.get(name).same_values(r.best.params.get(name))) << name;
    EXPECT_EQ(back.params.trainable(name), r.best.params.trainable(name));
  }
  const model::LipReadingModel m(back.config.model_config());
  EXPECT_EQ(train::evaluate(m, back.params, ds.test).accuracy(), r.best.test_accuracy);
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_EQ(report["epochs"].size(), 3u);
  EXPECT_EQ(report["best_epoch"], r.best.epoch);

  // a checkpoint whose tensors do not fit its config is rejected
  auto c = data::read_container(cfg.train.checkpoint);
  c.records.pop_back();
  EXPECT_THROW(train::checkpoint_from_container(c), data::ContainerError);
}

TEST(Trainer, NonFiniteLossNamesTheOp) {
  const auto cfg = tiny_config();
  auto ds = data::synth_generate(cfg.data);
  for (auto& s : ds.train) s.sequence.mutable_data()[5] = std::nan("");
  try {
    train::train(cfg, ds);
    FAIL() << "training did not abort";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("op '"), std::string::npos) << msg;
  }
}

TEST(Trainer, EarlyStopEndsTheRun) {
  const auto cfg = tiny_config("train.epochs = 60\ntrain.lr = 0.01\ntrain.stop_train_accuracy = 0.9\ntrain.stop_test_accuracy = 0.5\n");
  const auto ds = data::synth_generate(cfg.data);
  const auto r = train::train(cfg, ds);
  ASSERT_LT(r.epochs.size(), 60u);
  EXPECT_GE(r.final_train_accuracy, 0.9);
  EXPECT_GE(*r.epochs.back().test_accuracy, 0.5);
  EXPECT_EQ(r.last.epoch, r.epochs.size());
}

TEST(Trainer, GeometryMismatch) {
  const auto cfg = tiny_config();
  auto other = cfg.data;
  other.height = 10;
  EXPECT_THROW(train::train(cfg, data::synth_generate(other)), ShapeError);
}

TEST(Config, ErrorsNameTheLine) {
  config::ExperimentConfig cfg;
  try {
    config::apply_text(cfg, "train.lr = 0.1\n\nmodel.bogus = 3\n", "x.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:3"), std::string::npos) << e.what();
  }
  try {
    config::apply_text(cfg, "train.lr = 0.1\ntrain.lr = 0.2\n", "y.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("y.cfg:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(config::apply_override(cfg, "train.epochs=abc"), ConfigError);
  EXPECT_THROW(config::apply_override(cfg, "train.epochs"), ConfigError);
  EXPECT_THROW(config::apply_override(cfg, "model.consensus=median"), ConfigError);
}

TEST(Config, PairsRoundTrip) {
  auto cfg = tiny_config("model.consensus = self_attention\ntrain.lr = 0.000123456789\n");
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : config::to_pairs(cfg)) kv[k] = v;
  EXPECT_EQ(config::to_pairs(config::from_pairs(kv)), config::to_pairs(cfg));
  EXPECT_EQ(config::from_pairs(kv).train.lr, 0.000123456789);
}

TEST(Config, TableTwoRows) {
  const std::filesystem::path dir = PYRLIP_SOURCE_DIR "/configs/table2";
  struct Row {
    const char* file;
    nn::SecondConv conv;
    model::ConsensusKind consensus;
    model::BoundaryMode boundary;
  };
  using nn::SecondConv;
  using model::BoundaryMode;
  using model::ConsensusKind;
  const Row rows[] = {
      {"baseline.cfg", SecondConv::standard, ConsensusKind::average, BoundaryMode::off},
      {"N1.cfg", SecondConv::standard, ConsensusKind::self_attention, BoundaryMode::off},
      {"N2.cfg", SecondConv::pyconv, ConsensusKind::average, BoundaryMode::off},
      {"N3.cfg", SecondConv::hpconv, ConsensusKind::average, BoundaryMode::off},
      {"N4.cfg", SecondConv::hpconv, ConsensusKind::self_attention, BoundaryMode::off},
      {"N5.cfg", SecondConv::standard, ConsensusKind::average, BoundaryMode::manual},
      {"N6.cfg", SecondConv::standard, ConsensusKind::self_attention, BoundaryMode::manual},
  };
  for (const auto& row : rows) {
    const auto cfg = config::load_file((dir / row.file).string());
    EXPECT_EQ(cfg.model.frontend.second_conv, row.conv) << row.file;
    EXPECT_EQ(cfg.model.consensus, row.consensus) << row.file;
    EXPECT_EQ(cfg.model.boundary, row.boundary) << row.file;
    EXPECT_NO_THROW(cfg.validate());
  }
}
