#pragma once

#include "arnet/nn.hpp"

namespace arnet {

// Chained channel+spatial attention with cross-block connections.  Each block
// refines its input feature map and hands its pre-sigmoid attention state to
// the next block, which folds it in through learnable connection functions:
// the channel path mixes the previous descriptor into the pooled statistics
// through a gated linear merge, the spatial path combines current and carried
// maps with the energy-weighted form ((a*g)^2+(b*t)^2)/(a*g+b*t).
//
// A block with no previous state is exactly standard channel->spatial
// attention (shared two-layer MLP over avg- and max-pooled descriptors summed
// pre-sigmoid; 7x7 conv over stacked channel mean/max maps).

struct AttentionConfig {
  int channels = 64;
  int reduction = 16;
  // channel width of the incoming carried state; 0 means same as `channels`
  // (no adapter needed)
  int prev_channels = 0;
  Real eps = Real(1e-6);
};

struct AttentionState {
  Var channel;  // pre-sigmoid channel descriptor (B,C,1,1)
  Var spatial;  // pre-sigmoid spatial map (B,1,H,W)
};

// alpha*g + beta*t, all shapes broadcasting.
Var connect_direct(const Var& g, const Var& t, const Var& alpha, const Var& beta);

// ((alpha*g)^2 + (beta*t)^2) / (alpha*g + beta*t), the denominator clamped
// away from zero by eps (sign preserved, zero treated as positive).
Var connect_weighted(const Var& g, const Var& t, const Var& alpha, const Var& beta,
                     Real eps);

struct AttentionBlock {
  AttentionConfig cfg;
  LinearLayer mlp1, mlp2;  // shared C -> C/r -> C
  Var alpha_c, beta_c;     // gates on current/carried channel descriptors
  Var wa1, wa2, ba;        // merge coefficients, avg path
  Var wm1, wm2, bm;        // merge coefficients, max path
  Var p1, p2;              // spatial connection coefficients
  Conv2dLayer adapter;     // 1x1 carried-state adapter (only when widths differ)
  Conv2dLayer conv7;       // 7x7, 2 -> 1

  static AttentionBlock make(Rng& rng, const AttentionConfig& cfg);

  struct Result {
    Var out;
    AttentionState state;      // to carry into the next block
    Var channel_map;           // sigmoid channel attention (B,C,1,1)
    Var spatial_map;           // sigmoid spatial attention (B,1,H,W)
  };
  Result forward(const Var& f, const AttentionState& prev) const;
  void collect(ParamSet& ps, const std::string& prefix) const;
};

struct AttentionChain {
  std::vector<AttentionBlock> blocks;

  static AttentionChain make(Rng& rng, int channels, int n_blocks, int reduction,
                             Real eps);
  struct Result {
    Var out;
    std::vector<AttentionBlock::Result> stages;
  };
  Result forward(const Var& f) const;
  void collect(ParamSet& ps, const std::string& prefix) const;
};

// Closed-form parameter accounting; must agree exactly with the live counts.
struct AttentionParamBreakdown {
  std::int64_t mlp = 0;
  std::int64_t spatial_conv = 0;
  std::int64_t merge = 0;
  std::int64_t mixing = 0;
  std::int64_t adapter = 0;
  std::int64_t total() const { return mlp + spatial_conv + merge + mixing + adapter; }
};
AttentionParamBreakdown attention_block_params(const AttentionConfig& cfg);
std::int64_t attention_params(const AttentionConfig& cfg, int n_blocks);

}  // namespace arnet
