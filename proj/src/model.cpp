#include "arnet/model.hpp"

namespace arnet {

std::string to_string(ReasonInputMode m) {
  switch (m) {
    case ReasonInputMode::kPredicted: return "predicted";
    case ReasonInputMode::kOracle: return "oracle";
    case ReasonInputMode::kDetached: return "detached";
  }
  return "predicted";
}

ReasonInputMode reason_input_from_string(const std::string& s) {
  if (s == "predicted") return ReasonInputMode::kPredicted;
  if (s == "oracle") return ReasonInputMode::kOracle;
  if (s == "detached") return ReasonInputMode::kDetached;
  throw DataError("unknown reason input mode: " + s +
                  " (expected predicted, oracle or detached)");
}

ModelConfig ModelConfig::desk() { return {}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.profile = "paper";
  c.apply_profile();
  return c;
}

void ModelConfig::apply_profile() {
  if (profile == "desk") {
    backbone = BackboneConfig::desk();
    maspp = MasppConfig::desk();
    trunk_channels = 64;
    hidden = 64;
  } else if (profile == "paper") {
    backbone = BackboneConfig::paper();
    maspp = MasppConfig::paper();
    trunk_channels = 256;
    hidden = 256;
  } else {
    throw DataError("unknown model profile: " + profile);
  }
}

ArNet ArNet::make(const ModelConfig& cfg) {
  require(cfg.maspp.in_t2 == cfg.backbone.c2 && cfg.maspp.in_t3 == cfg.backbone.c3 &&
              cfg.maspp.in_t4 == cfg.backbone.c4,
          "fusion input widths do not match backbone taps");
  ArNet m;
  m.cfg = cfg;
  Rng rng(cfg.seed);
  m.backbone = Backbone::make(rng, cfg.backbone);
  m.maspp = Maspp::make(rng, cfg.maspp);
  m.attention = AttentionChain::make(rng, cfg.maspp.projection_out,
                                     cfg.attention_blocks, cfg.reduction,
                                     cfg.attention_eps);
  m.trunk_conv = Conv2dLayer::make(rng, cfg.maspp.projection_out, cfg.trunk_channels,
                                   3, 1, 1);
  m.trunk_fc = LinearLayer::make(rng, cfg.trunk_channels, cfg.hidden);
  m.action_head = LinearLayer::make(rng, cfg.hidden, kNumActions);
  m.reason_head = LinearLayer::make(rng, cfg.hidden + kNumActions, kNumReasons);
  return m;
}

ForwardTrace ArNet::forward(const Var& images, const Tensor* oracle_actions) const {
  ForwardTrace t;
  t.taps = backbone.extract(images);
  t.fused = maspp.fuse(t.taps);
  auto att = attention.forward(t.fused);
  t.attended = att.out;
  t.stages = std::move(att.stages);
  t.trunk_conv = relu(trunk_conv.forward(t.attended));
  const int B = images.dim(0);
  const Var pooled = reshape(adaptive_max_pool2d(t.trunk_conv, 1, 1),
                             {B, cfg.trunk_channels});
  t.embedding = relu(trunk_fc.forward(pooled));
  t.action_logits = action_head.forward(t.embedding);
  t.action_probs = sigmoid(t.action_logits);

  Var action_slots;
  switch (cfg.reason_input) {
    case ReasonInputMode::kPredicted:
      action_slots = t.action_probs;
      break;
    case ReasonInputMode::kOracle: {
      require(oracle_actions != nullptr,
              "oracle reason input requires ground-truth actions");
      require(oracle_actions->rank() == 2 && oracle_actions->dim(0) == B &&
                  oracle_actions->dim(1) == kNumActions,
              "oracle action tensor must be (batch,4)");
      action_slots = Var::leaf(*oracle_actions, false);
      break;
    }
    case ReasonInputMode::kDetached:
      action_slots = detach(t.action_probs);
      break;
  }
  t.reason_logits = reason_head.forward(concat({t.embedding, action_slots}, 1));
  t.reason_probs = sigmoid(t.reason_logits);
  return t;
}

ModelOutput ArNet::read_output(const ForwardTrace& t) const {
  ModelOutput out;
  const Tensor& ap = t.action_probs.value();
  const Tensor& rp = t.reason_probs.value();
  const int B = ap.dim(0);
  const DecisionConfig dc{cfg.threshold};
  for (int b = 0; b < B; ++b) {
    std::vector<double> a(kNumActions), r(kNumReasons);
    for (int i = 0; i < kNumActions; ++i) a[static_cast<std::size_t>(i)] = ap.at2(b, i);
    for (int i = 0; i < kNumReasons; ++i) r[static_cast<std::size_t>(i)] = rp.at2(b, i);
    out.actions.push_back(decide(a, dc));
    out.reasons.push_back(decide(r, dc));
    out.action_probs.push_back(std::move(a));
    out.reason_probs.push_back(std::move(r));
  }
  return out;
}

ParamSet ArNet::parameters() const {
  ParamSet ps;
  backbone.collect(ps, "backbone");
  maspp.collect(ps, "maspp");
  attention.collect(ps, "attention");
  trunk_conv.collect(ps, "trunk.conv3");
  trunk_fc.collect(ps, "trunk.fc");
  action_head.collect(ps, "action_head");
  reason_head.collect(ps, "reason_head");
  return ps;
}

ArNet clone_model(const ArNet& m) {
  ArNet copy = ArNet::make(m.cfg);
  ParamSet src = m.parameters();
  ParamSet dst = copy.parameters();
  require(src.params.size() == dst.params.size(), "clone parameter count mismatch");
  for (std::size_t i = 0; i < src.params.size(); ++i)
    dst.params[i].var.value_mut() = src.params[i].var.value();
  return copy;
}

Tensor ArNet::normalize(const std::vector<const std::uint8_t*>& rgb, int h, int w) const {
  const int B = static_cast<int>(rgb.size());
  require(B > 0, "empty batch");
  Tensor x({B, 3, h, w});
  const std::int64_t sp = std::int64_t(h) * w;
  for (int b = 0; b < B; ++b) {
    const std::uint8_t* src = rgb[static_cast<std::size_t>(b)];
    for (int c = 0; c < 3; ++c) {
      const Real mean = static_cast<Real>(cfg.norm_mean[static_cast<std::size_t>(c)]);
      const Real inv_std =
          static_cast<Real>(1.0 / cfg.norm_std[static_cast<std::size_t>(c)]);
      Real* dst = x.data() + (std::int64_t(b) * 3 + c) * sp;
      for (std::int64_t i = 0; i < sp; ++i)
        dst[i] = (Real(src[i * 3 + c]) / Real(255) - mean) * inv_std;
    }
  }
  return x;
}

}  // namespace arnet
