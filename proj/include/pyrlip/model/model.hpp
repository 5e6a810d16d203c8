#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pyrlip/model/consensus.hpp"
#include "pyrlip/nn/mstcn.hpp"
#include "pyrlip/nn/params.hpp"
#include "pyrlip/nn/resnet.hpp"

namespace pyrlip::model {

enum class ConsensusKind { average, self_attention };
enum class BoundaryMode { off, manual };

inline std::string to_string(ConsensusKind k) { return k == ConsensusKind::average ? "average" : "self_attention"; }
inline std::string to_string(BoundaryMode m) { return m == BoundaryMode::off ? "off" : "manual"; }

inline ConsensusKind parse_consensus(const std::string& s) {
  if (s == "average") return ConsensusKind::average;
  if (s == "self_attention") return ConsensusKind::self_attention;
  throw ConfigError("unknown consensus '" + s + "' (expected average or self_attention)");
}

inline BoundaryMode parse_boundary(const std::string& s) {
  if (s == "off") return BoundaryMode::off;
  if (s == "manual") return BoundaryMode::manual;
  throw ConfigError("unknown boundary mode '" + s + "' (expected off or manual)");
}

struct ModelConfig {
  nn::FrontendConfig frontend;
  nn::BackendConfig backend;
  ConsensusKind consensus = ConsensusKind::average;
  BoundaryMode boundary = BoundaryMode::off;
  std::size_t vocab = 10;
  AttentionGeometry attention;
  // input geometry
  std::size_t frames = 12, height = 24, width = 24;
  std::uint64_t seed = 0;
  // start the attention projections at zero (average-consensus equivalent)
  bool zero_init_attention = false;

  /// C2 == C3: the attention residual adds the temporal mean of F3.
  std::size_t feature_width() const { return backend.hidden; }

  void validate() const {
    if (vocab == 0) throw ConfigError("model: vocabulary must be non-empty");
    if (frames == 0 || height == 0 || width == 0) throw ConfigError("model: input extents must be >= 1");
    if (consensus == ConsensusKind::self_attention &&
        (attention.heads == 0 || attention.key_dim == 0 || attention.value_dim == 0))
      throw ConfigError("model: attention heads and head dimensions must be >= 1");
    frontend.validate();
    frontend.stage_extents(height, width);
    backend.validate();
  }
};

struct ModelOutput {
  Tensor logits;                          // [B x V]
  Tensor features;                        // F4, [B x C3]
  std::vector<AttentionRecord> attention; // one per sample for self-attention consensus
};

/// Frontend -> backend -> consensus -> classifier. All shape checks happen
/// in the constructor.
class LipReadingModel {
public:
  explicit LipReadingModel(ModelConfig cfg)
      : cfg_((cfg.validate(), std::move(cfg))), frontend_(cfg_.frontend, cfg_.height, cfg_.width),
        backend_(cfg_.backend, cfg_.frontend.out_channels()) {}

  const ModelConfig& config() const { return cfg_; }

  /// Fresh parameters drawn from the config seed.
  void init(nn::ParamStore& store) const {
    Rng rng(cfg_.seed);
    frontend_.init(store, rng);
    backend_.init(store, rng);
    const std::size_t c2 = cfg_.feature_width();
    if (cfg_.consensus == ConsensusKind::self_attention) {
      const auto& g = cfg_.attention;
      const double std = cfg_.zero_init_attention ? 0.0 : 1.0 / std::sqrt(static_cast<double>(c2));
      store.add("consensus.wq", Tensor::randn({c2, g.heads * g.key_dim}, rng, 0.0, std));
      store.add("consensus.wk", Tensor::randn({c2, g.heads * g.key_dim}, rng, 0.0, std));
      store.add("consensus.wv", Tensor::randn({c2, g.heads * g.value_dim}, rng, 0.0, std));
      store.add("consensus.wo", Tensor::randn({g.heads * g.value_dim, c2}, rng, 0.0, std));
    }
    store.add("classifier.weight", Tensor::randn({c2, cfg_.vocab}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(c2))));
    store.add("classifier.bias", Tensor::zeros({cfg_.vocab}));
  }

  nn::ParamStore make_params() const {
    nn::ParamStore store;
    init(store);
    return store;
  }

  /// X[B x T x H x W] -> logits. Masks are required in manual boundary mode
  /// and ignored otherwise.
  ModelOutput forward(nn::Context& ctx, const Tensor& x, const std::vector<BoundaryMask>& masks = {}) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.frames || x.dim(2) != cfg_.height || x.dim(3) != cfg_.width)
      throw ShapeError("model: expected input [B x " + std::to_string(cfg_.frames) + " x " +
                       std::to_string(cfg_.height) + " x " + std::to_string(cfg_.width) + "], got " +
                       pyrlip::to_string(x.shape()));
    const std::size_t batch = x.dim(0);
    std::vector<BoundaryMask> used;
    if (cfg_.boundary == BoundaryMode::manual) {
      if (masks.size() != batch) throw ShapeError("model: manual boundary mode needs one mask per sample");
      used = masks;
    }
    const Tensor input = reshape(x, {batch, 1, cfg_.frames, cfg_.height, cfg_.width});
    const Tensor f2 = frontend_.forward(ctx, input);
    const Tensor f3 = backend_.forward(ctx, f2);
    ModelOutput out;
    if (cfg_.consensus == ConsensusKind::average) {
      out.features = consensus_average(f3, used);
    } else {
      AttentionWeights w{ctx.param("consensus.wq"), ctx.param("consensus.wk"), ctx.param("consensus.wv"),
                         ctx.param("consensus.wo")};
      auto r = consensus_attention(f3, w, cfg_.attention, used);
      out.features = r.f4;
      out.attention = std::move(r.attention);
    }
    out.logits = classifier_logits(out.features, ctx.param("classifier.weight"), ctx.param("classifier.bias"));
    return out;
  }

  const nn::Frontend& frontend() const { return frontend_; }
  const nn::Backend& backend() const { return backend_; }

private:
  ModelConfig cfg_;
  nn::Frontend frontend_;
  nn::Backend backend_;
};

} // namespace pyrlip::model
