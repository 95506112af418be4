#pragma once

#include "arnet/nn.hpp"

namespace arnet {

// Strided conv backbone exposing three feature taps at 1/4, 1/8 and 1/16 of
// the input resolution.  `desk` is the trainable-on-a-laptop profile; `paper`
// mirrors a ResNet-scale channel layout and exists for parameter accounting
// and weight import, not for training here.
struct BackboneConfig {
  int stem = 16;
  int c2 = 64;   // tap at /4
  int c3 = 128;  // tap at /8
  int c4 = 256;  // tap at /16
  static BackboneConfig desk() { return {}; }
  static BackboneConfig paper() { return {64, 512, 1024, 2048}; }
};

struct FeatureTaps {
  Var t2, t3, t4;
};

struct Backbone {
  BackboneConfig cfg;
  Conv2dLayer stem, s2, s3, s4;

  static Backbone make(Rng& rng, const BackboneConfig& cfg);
  // Input is (B,3,H,W) with H and W divisible by 16.
  FeatureTaps extract(const Var& images) const;
  void collect(ParamSet& ps, const std::string& prefix) const;
};

}  // namespace arnet
