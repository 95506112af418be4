#pragma once

#include <array>

#include "arnet/backbone.hpp"

namespace arnet {

// Multi-scale fusion over the three backbone taps.  Seven branches produce
// `branch_channels` maps each at the deepest tap's grid, get concatenated and
// projected: a 1x1 on t4; three dilated 3x3s on t4; global average context on
// t4; a 3x3 on t3; a dilated 3x3 on t2.  Branch convolutions are bias-free
// and ReLU-activated; the projection is a biased 1x1 with no activation, so
// an all-zero input yields exactly the projection bias.
struct MasppConfig {
  int in_t2 = 64, in_t3 = 128, in_t4 = 256;
  int branch_channels = 32;
  std::array<int, 3> atrous_rates{12, 24, 36};
  int t3_dilation = 1;
  int t2_dilation = 3;
  int projection_out = 64;

  static MasppConfig desk() { return {}; }
  static MasppConfig paper() {
    MasppConfig c;
    c.in_t2 = 512;
    c.in_t3 = 1024;
    c.in_t4 = 2048;
    c.branch_channels = 256;
    c.projection_out = 256;
    return c;
  }
};

struct Maspp {
  MasppConfig cfg;
  Conv2dLayer b_point;                  // 1x1 on t4
  std::array<Conv2dLayer, 3> b_atrous;  // 3x3 dilated on t4
  Conv2dLayer b_context;                // 1x1 after global average pool
  Conv2dLayer b_t3, b_t2;               // 3x3 on the shallower taps
  Conv2dLayer projection;               // 1x1 over the 7*K concat

  static Maspp make(Rng& rng, const MasppConfig& cfg);
  Var fuse(const FeatureTaps& taps) const;
  void collect(ParamSet& ps, const std::string& prefix) const;
};

// Downscales by exact box averaging when the ratio is integer, bilinear
// otherwise; identity when sizes already match.
Var resize_to(const Var& x, int oh, int ow);

}  // namespace arnet
