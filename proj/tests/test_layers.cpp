#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pyrlip/nn/cost.hpp"
#include "pyrlip/nn/mstcn.hpp"
#include "pyrlip/nn/pyconv.hpp"
#include "pyrlip/nn/resnet.hpp"

using namespace pyrlip;
using namespace pyrlip::nn;

namespace {

// Channels [lo, hi) of x[B x C x H x W].
Tensor channels(const Tensor& x, std::size_t lo, std::size_t hi) {
  const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> v;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t ch = lo; ch < hi; ++ch)
      for (std::size_t p = 0; p < hw; ++p) v.push_back(x[(i * c + ch) * hw + p]);
  return Tensor({b, hi - lo, x.dim(2), x.dim(3)}, std::move(v));
}

Tensor cat(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) {
    v.insert(v.end(), a.values().begin() + i * ca * hw, a.values().begin() + (i + 1) * ca * hw);
    v.insert(v.end(), b.values().begin() + i * cb * hw, b.values().begin() + (i + 1) * cb * hw);
  }
  return Tensor({n, ca + cb, a.dim(2), a.dim(3)}, std::move(v));
}

std::vector<Tensor> level_weights(const PyConvConfig& cfg, std::size_t c_in, Rng& rng) {
  std::vector<Tensor> w;
  for (std::size_t i = 0; i < cfg.levels; ++i) w.push_back(randn(cfg.weight_shape(c_in, i), rng));
  return w;
}

} // namespace

TEST(PyConv, SingleLevelIsConv2d) {
  Rng rng(1);
  const auto cfg = PyConvConfig::equal_split(4, {3});
  const Tensor x = randn({2, 3, 7, 7}, rng), w = randn({4, 3, 3, 3}, rng);
  EXPECT_TRUE(pyconv_forward(cfg, x, {w}).same_values(conv2d(x, w, std::nullopt, 1, 1)));
}

TEST(PyConv, DefaultPyramidLevelOrder) {
  Rng rng(2);
  const auto cfg = PyConvConfig::equal_split(8);
  EXPECT_EQ(cfg.out_channels_per_level, (std::vector<std::size_t>{2, 2, 2, 2}));
  const Tensor x = randn({1, 3, 9, 9}, rng);
  const auto w = level_weights(cfg, 3, rng);
  const Tensor y = pyconv_forward(cfg, x, w);
  ASSERT_EQ(y.shape(), (Shape{1, 8, 9, 9}));
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t k = cfg.kernel_sizes[i];
    EXPECT_LE(oracle::max_abs_diff(channels(y, 2 * i, 2 * i + 2), oracle::conv2d(x, w[i], {}, 1, (k - 1) / 2)), 1e-10);
  }
}

TEST(PyConv, TwoLevelsEqualManualComposition) {
  Rng rng(3);
  const auto cfg = PyConvConfig::equal_split(6, {3, 5});
  const Tensor x = randn({2, 2, 6, 5}, rng);
  const auto w = level_weights(cfg, 2, rng);
  const Tensor manual = concat_channels({conv2d(x, w[0], std::nullopt, 1, 1), conv2d(x, w[1], std::nullopt, 1, 2)});
  EXPECT_TRUE(pyconv_forward(cfg, x, w).same_values(manual));
}

TEST(PyConv, ConfigErrors) {
  EXPECT_THROW(PyConvConfig::equal_split(6), ConfigError);
  PyConvConfig bad = PyConvConfig::equal_split(8);
  bad.kernel_sizes[1] = 4;
  EXPECT_THROW(bad.validate(), ConfigError);
  Rng rng(4);
  const auto cfg = PyConvConfig::equal_split(4, {3, 5});
  auto w = level_weights(cfg, 2, rng);
  w[1] = randn({2, 3, 5, 5}, rng);
  EXPECT_THROW(pyconv_forward(cfg, randn({1, 2, 5, 5}, rng), w), ShapeError);
}

TEST(HPConv, FlagOffIsPyConv) {
  Rng rng(5);
  auto cfg = PyConvConfig::equal_split(8);
  const Tensor x = randn({2, 3, 8, 8}, rng);
  const auto w = level_weights(cfg, 3, rng);
  EXPECT_TRUE(hpconv_forward(cfg, x, w).same_values(pyconv_forward(cfg, x, w)));
}

TEST(HPConv, ZeroHierarchicalChannelsGivePyConv) {
  Rng rng(6);
  auto hcfg = PyConvConfig::equal_split(8, {3, 5, 7, 9}, 1, true);
  const std::size_t c_in = 3;
  const Tensor x = randn({1, c_in, 9, 9}, rng);
  auto hw = level_weights(hcfg, c_in, rng);
  std::vector<Tensor> pw;
  for (std::size_t i = 0; i < hcfg.levels; ++i) {
    const Shape s = hw[i].shape();
    const std::size_t kk = s[2] * s[3];
    auto d = hw[i].mutable_data();
    std::vector<double> flat;
    for (std::size_t o = 0; o < s[0]; ++o)
      for (std::size_t c = 0; c < s[1]; ++c)
        for (std::size_t p = 0; p < kk; ++p) {
          double& v = d[(o * s[1] + c) * kk + p];
          if (c >= c_in) v = 0.0;
          else flat.push_back(v);
        }
    pw.push_back(Tensor({s[0], c_in, s[2], s[3]}, flat));
  }
  auto pcfg = hcfg;
  pcfg.hierarchical = false;
  EXPECT_LE(oracle::max_abs_diff(hpconv_forward(hcfg, x, hw), pyconv_forward(pcfg, x, pw)), 1e-12);
}

TEST(HPConv, TwoLevelsEqualHandComposition) {
  Rng rng(7);
  auto cfg = PyConvConfig::equal_split(4, {3, 5}, 1, true);
  const Tensor x = randn({2, 3, 6, 7}, rng);
  const auto w = level_weights(cfg, 3, rng);
  ASSERT_EQ(w[1].shape(), (Shape{2, 5, 5, 5}));
  const Tensor y0 = oracle::conv2d(x, w[0], {}, 1, 1);
  const Tensor y1 = oracle::conv2d(cat(x, y0), w[1], {}, 1, 2);
  EXPECT_LE(oracle::max_abs_diff(hpconv_forward(cfg, x, w), cat(y0, y1)), 1e-10);
}

TEST(HPConv, StridedChainSubsamplesFullResolutionLevels) {
  Rng rng(8);
  auto cfg = PyConvConfig::equal_split(4, {3, 5}, 2, true);
  const Tensor x = randn({1, 2, 7, 7}, rng);
  const auto w = level_weights(cfg, 2, rng);
  const Tensor y0 = oracle::conv2d(x, w[0], {}, 1, 1);
  const Tensor y1 = oracle::conv2d(cat(x, y0), w[1], {}, 1, 2);
  const Tensor full = cat(y0, y1);
  std::vector<double> sub;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 7; i += 2)
      for (std::size_t j = 0; j < 7; j += 2) sub.push_back(full[(c * 7 + i) * 7 + j]);
  const Tensor y = hpconv_forward(cfg, x, w);
  ASSERT_EQ(y.shape(), (Shape{1, 4, 4, 4}));
  EXPECT_LE(oracle::max_abs_diff(y, Tensor({1, 4, 4, 4}, sub)), 1e-10);
}

TEST(PyConv, LevelsShareExtents) {
  Rng rng(9);
  for (std::size_t k = 3; k <= 9; k += 2)
    for (std::size_t stride : {1u, 2u})
      for (bool hier : {false, true}) {
        auto cfg = PyConvConfig::equal_split(4, {3, k}, stride, hier);
        const Tensor y = hpconv_forward(cfg, randn({1, 2, 9, 10}, rng), level_weights(cfg, 2, rng));
        EXPECT_EQ(y.dim(2), conv_out_extent(9, 3, stride, 1));
        EXPECT_EQ(y.dim(3), conv_out_extent(10, 3, stride, 1));
      }
}

TEST(Cost, ParamsAndCountedMacsMatchClosedForm) {
  Rng rng(10);
  for (bool hier : {false, true}) {
    auto cfg = PyConvConfig::equal_split(8, {3, 5, 7, 9}, 1, hier);
    std::uint64_t params = 0;
    for (std::size_t i = 0; i < 4; ++i)
      params += std::uint64_t{2} * (3 + (hier && i > 0 ? 2 : 0)) * cfg.kernel_sizes[i] * cfg.kernel_sizes[i];
    EXPECT_EQ(pyconv_params(cfg, 3), params);
    conv_mac_counter() = 0;
    hpconv_forward(cfg, randn({2, 3, 6, 5}, rng), level_weights(cfg, 3, rng));
    const auto expected = oracle::pyramid_macs(2, 3, cfg.kernel_sizes, cfg.out_channels_per_level, 6, 5, hier);
    EXPECT_EQ(conv_mac_counter(), expected);
    EXPECT_EQ(pyconv_macs(cfg, 3, 2, 6, 5), expected);
  }
  EXPECT_GT(pyconv_macs(PyConvConfig::equal_split(8, {3, 5, 7, 9}, 1, true), 3, 1, 8, 8),
            pyconv_macs(PyConvConfig::equal_split(8, {3, 5, 7, 9}, 1, false), 3, 1, 8, 8));
  EXPECT_EQ(conv2d_params(3, 4, 5), 300u);
}

TEST(BasicBlock, ZeroWeightsIdentityShortcutIsRelu) {
  Rng rng(11);
  for (auto second : {SecondConv::standard, SecondConv::pyconv, SecondConv::hpconv}) {
    BasicBlock blk("b", 4, 4, 1, second, {3, 5});
    ParamStore store;
    blk.init(store, rng);
    for (const auto& n : store.names(true))
      if (n.find("weight") != std::string::npos) store.get_mut(n) = zeros(store.get(n).shape());
    Context ctx(store, nullptr, NormMode::eval);
    const Tensor x = randn({2, 4, 5, 5}, rng);
    EXPECT_TRUE(blk.forward(ctx, x).same_values(relu(x)));
  }
}

TEST(BasicBlock, StandardMatchesReferenceComposition) {
  Rng rng(12);
  BasicBlock blk("b", 3, 6, 2, SecondConv::standard);
  ParamStore store;
  blk.init(store, rng);
  // non-trivial running statistics and affine terms
  for (const auto& n : store.names()) {
    if (n.find("running_var") != std::string::npos || n.find("gamma") != std::string::npos)
      store.get_mut(n) = Tensor::uniform(store.get(n).shape(), rng, 0.5, 2.0);
    else if (n.find("running_mean") != std::string::npos || n.find("beta") != std::string::npos)
      store.get_mut(n) = randn(store.get(n).shape(), rng);
  }
  auto bn = [&](const Tensor& x, const std::string& p) {
    const std::size_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t ch = (i / hw) % c;
      v[i] = (x[i] - store.get(p + ".running_mean")[ch]) / std::sqrt(store.get(p + ".running_var")[ch] + 1e-5) *
                 store.get(p + ".gamma")[ch] +
             store.get(p + ".beta")[ch];
    }
    return Tensor(x.shape(), v);
  };
  auto r = [](const Tensor& x) {
    std::vector<double> v(x.values());
    for (auto& e : v) e = std::max(e, 0.0);
    return Tensor(x.shape(), v);
  };
  const Tensor x = randn({2, 3, 8, 7}, rng);
  const Tensor h = r(bn(oracle::conv2d(x, store.get("b.conv1.weight"), {}, 2, 1), "b.bn1"));
  const Tensor h2 = bn(oracle::conv2d(h, store.get("b.conv2.weight"), {}, 1, 1), "b.bn2");
  const Tensor sc = bn(oracle::conv2d(x, store.get("b.shortcut.weight"), {}, 2, 0), "b.shortcut_bn");
  std::vector<double> sum(h2.size());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = h2[i] + sc[i];
  Context ctx(store, nullptr, NormMode::eval);
  const Tensor y = blk.forward(ctx, x);
  ASSERT_EQ(y.shape(), (Shape{2, 6, 4, 4}));
  EXPECT_LE(oracle::max_abs_diff(y, r(Tensor(h2.shape(), sum))), 1e-10);
}

TEST(Frontend, DeskShapesAndConstantClip) {
  FrontendConfig cfg;
  Frontend fe(cfg, 24, 24);
  ParamStore store;
  Rng rng(13);
  fe.init(store, rng);
  Context ctx(store, nullptr, NormMode::eval);
  const Tensor y = fe.forward(ctx, Tensor::full({2, 1, 12, 24, 24}, 0.4));
  ASSERT_EQ(y.shape(), (Shape{2, 12, 64}));
  // away from the clip ends the temporal stem window sees identical frames;
  // the zero padding breaks the symmetry only within 2 frames of either end
  for (std::size_t t = 3; t <= 9; ++t)
    for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(y[t * 64 + c], y[2 * 64 + c]);
}

TEST(Frontend, FullScaleExtentsAndCollapse) {
  const auto e = FrontendConfig::full_scale().stage_extents(88, 88);
  std::vector<std::size_t> hs;
  for (const auto& p : e) hs.push_back(p[0]);
  EXPECT_EQ(hs, (std::vector<std::size_t>{44, 22, 11, 6, 3}));
  FrontendConfig cfg;
  EXPECT_NO_THROW(Frontend(cfg, 1, 1)); // padding keeps every extent >= 1
  cfg.stem_pad = {2, 0, 0};
  EXPECT_THROW(Frontend(cfg, 24, 6), ConfigError); // 7-wide unpadded stem on 6 columns
  cfg.stem_stride[0] = 2;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Backend, PreservesTAndShape) {
  Rng rng(14);
  BackendConfig cfg;
  Backend be(cfg, 16);
  ParamStore store;
  be.init(store, rng);
  Context ctx(store, nullptr, NormMode::eval);
  EXPECT_EQ(be.forward(ctx, randn({3, 7, 16}, rng)).shape(), (Shape{3, 7, 64}));
}

TEST(Backend, IdentityBranchGivesReluPlusInput) {
  Rng rng(15);
  BackendConfig cfg;
  cfg.blocks = 1;
  cfg.branch_kernels = {1};
  cfg.hidden = 5;
  Backend be(cfg, 5);
  ParamStore store;
  be.init(store, rng);
  std::vector<double> eye(25, 0.0);
  for (int i = 0; i < 5; ++i) eye[i * 6] = 1.0;
  store.get_mut("backend.block0.branch0.weight") = Tensor({5, 5, 1}, eye);
  Context ctx(store, nullptr, NormMode::eval);
  const Tensor x = randn({2, 4, 5}, rng);
  const Tensor y = be.forward(ctx, x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], std::max(x[i], 0.0) / std::sqrt(1 + 1e-5) + x[i], 1e-12);
}

TEST(Backend, MatchesConv1dOracleChain) {
  Rng rng(16);
  BackendConfig cfg;
  cfg.blocks = 2;
  cfg.branch_kernels = {3, 5};
  cfg.hidden = 5; // uneven split 3 + 2
  Backend be(cfg, 3);
  ParamStore store;
  be.init(store, rng);
  Context ctx(store, nullptr, NormMode::eval);
  const std::size_t B = 2, T = 6;
  const Tensor f2 = randn({B, T, 3}, rng);
  // channels-first working copy
  auto to_cf = [&](const Tensor& x) { return permute(x, {0, 2, 1}); };
  Tensor h = to_cf(f2);
  for (std::size_t b = 0; b < 2; ++b) {
    const std::string p = "backend.block" + std::to_string(b);
    const Tensor y0 = oracle::conv1d(h, store.get(p + ".branch0.weight"), {}, 1, 1, 1);
    const Tensor y1 = oracle::conv1d(h, store.get(p + ".branch1.weight"), {}, 1, 2, 1);
    ASSERT_EQ(y0.dim(1) + y1.dim(1), 5u);
    std::vector<double> out;
    for (std::size_t n = 0; n < B; ++n) {
      for (std::size_t c = 0; c < y0.dim(1); ++c)
        for (std::size_t t = 0; t < T; ++t) out.push_back(y0[(n * y0.dim(1) + c) * T + t]);
      for (std::size_t c = 0; c < y1.dim(1); ++c)
        for (std::size_t t = 0; t < T; ++t) out.push_back(y1[(n * y1.dim(1) + c) * T + t]);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::size_t c = (i / T) % 5;
      const double bn = out[i] / std::sqrt(1 + 1e-5) * store.get(p + ".bn.gamma")[c] + store.get(p + ".bn.beta")[c];
      out[i] = std::max(bn, 0.0);
    }
    Tensor res = h;
    if (store.contains(p + ".residual.weight"))
      res = oracle::conv1d(h, store.get(p + ".residual.weight"), store.get(p + ".residual.bias").values(), 1, 0, 1);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += res[i];
    h = Tensor({B, 5, T}, out);
  }
  EXPECT_LE(oracle::max_abs_diff(be.forward(ctx, f2), permute(h, {0, 2, 1})), 1e-10);
}
