#include "arnet/backbone.hpp"

namespace arnet {

Backbone Backbone::make(Rng& rng, const BackboneConfig& cfg) {
  Backbone b;
  b.cfg = cfg;
  b.stem = Conv2dLayer::make(rng, 3, cfg.stem, 3, 2, 1);
  b.s2 = Conv2dLayer::make(rng, cfg.stem, cfg.c2, 3, 2, 1);
  b.s3 = Conv2dLayer::make(rng, cfg.c2, cfg.c3, 3, 2, 1);
  b.s4 = Conv2dLayer::make(rng, cfg.c3, cfg.c4, 3, 2, 1);
  return b;
}

FeatureTaps Backbone::extract(const Var& images) const {
  require(images.value().rank() == 4 && images.dim(1) == 3,
          "backbone expects (batch,3,height,width) input, got " +
              shape_str(images.shape()));
  require(images.dim(0) > 0, "empty batch");
  const int H = images.dim(2), W = images.dim(3);
  require(H % 16 == 0 && W % 16 == 0,
          "input spatial size must be a multiple of 16, got " + std::to_string(H) +
              "x" + std::to_string(W));
  FeatureTaps taps;
  const Var x1 = relu(stem.forward(images));
  taps.t2 = relu(s2.forward(x1));
  taps.t3 = relu(s3.forward(taps.t2));
  taps.t4 = relu(s4.forward(taps.t3));
  return taps;
}

void Backbone::collect(ParamSet& ps, const std::string& prefix) const {
  stem.collect(ps, prefix + ".stem");
  s2.collect(ps, prefix + ".s2");
  s3.collect(ps, prefix + ".s3");
  s4.collect(ps, prefix + ".s4");
}

}  // namespace arnet
