#pragma once

#include <array>
#include <optional>

#include "arnet/attention.hpp"
#include "arnet/backbone.hpp"
#include "arnet/labels.hpp"
#include "arnet/maspp.hpp"

namespace arnet {

// What feeds the reason head's action slots: the live action probabilities
// (gradients flow back through the action head), the ground-truth bits, or
// the probabilities with gradients cut.
enum class ReasonInputMode { kPredicted, kOracle, kDetached };

std::string to_string(ReasonInputMode m);
ReasonInputMode reason_input_from_string(const std::string& s);

struct ModelConfig {
  std::string profile = "desk";  // "desk" or "paper"
  BackboneConfig backbone = BackboneConfig::desk();
  MasppConfig maspp = MasppConfig::desk();
  int attention_blocks = 2;
  int reduction = 16;
  Real attention_eps = Real(1e-6);
  int trunk_channels = 64;  // 3x3 trunk conv width
  int hidden = 64;          // shared embedding width
  double threshold = 0.5;
  ReasonInputMode reason_input = ReasonInputMode::kPredicted;
  std::uint64_t seed = 1;
  int input_h = 128, input_w = 256;
  std::array<double, 3> norm_mean{0.5, 0.5, 0.5};
  std::array<double, 3> norm_std{0.25, 0.25, 0.25};

  static ModelConfig desk();
  static ModelConfig paper();
  void apply_profile();  // resets backbone/maspp/widths from `profile`
};

// Everything the forward pass produced, as live graph nodes.  Kept around for
// the loss, for attribution maps and for tests.
struct ForwardTrace {
  FeatureTaps taps;
  Var fused;                                    // multi-scale fusion output
  Var attended;                                 // attention chain output
  std::vector<AttentionBlock::Result> stages;   // per-block attention maps
  Var trunk_conv;                               // post-ReLU trunk conv map
  Var embedding;                                // shared embedding h
  Var action_logits, action_probs;
  Var reason_logits, reason_probs;
};

struct ModelOutput {
  std::vector<std::vector<double>> action_probs;  // per sample, 4
  std::vector<std::vector<double>> reason_probs;  // per sample, 21
  std::vector<Bits> actions;                      // decided bits
  std::vector<Bits> reasons;
};

struct ArNet {
  ModelConfig cfg;
  Backbone backbone;
  Maspp maspp;
  AttentionChain attention;
  Conv2dLayer trunk_conv;
  LinearLayer trunk_fc;
  LinearLayer action_head;
  LinearLayer reason_head;

  static ArNet make(const ModelConfig& cfg);

  // `oracle_actions` (B,4 in Real) is required in kOracle mode and ignored
  // otherwise.
  ForwardTrace forward(const Var& images, const Tensor* oracle_actions = nullptr) const;
  ModelOutput read_output(const ForwardTrace& t) const;

  ParamSet parameters() const;
  std::int64_t parameter_count() const { return parameters().count(); }

  // Converts a batch of interleaved uint8 RGB images into the normalized
  // planar input tensor.
  Tensor normalize(const std::vector<const std::uint8_t*>& rgb, int h, int w) const;
};

// Independent copy: fresh graph leaves carrying the same weight values.
ArNet clone_model(const ArNet& m);

}  // namespace arnet
