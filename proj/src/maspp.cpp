#include "arnet/maspp.hpp"

namespace arnet {

Maspp Maspp::make(Rng& rng, const MasppConfig& cfg) {
  Maspp m;
  m.cfg = cfg;
  const int K = cfg.branch_channels;
  m.b_point = Conv2dLayer::make(rng, cfg.in_t4, K, 1, 1, 0, 1, /*bias=*/false);
  for (std::size_t i = 0; i < cfg.atrous_rates.size(); ++i) {
    const int r = cfg.atrous_rates[i];
    m.b_atrous[i] = Conv2dLayer::make(rng, cfg.in_t4, K, 3, 1, r, r, false);
  }
  m.b_context = Conv2dLayer::make(rng, cfg.in_t4, K, 1, 1, 0, 1, false);
  m.b_t3 = Conv2dLayer::make(rng, cfg.in_t3, K, 3, 1, cfg.t3_dilation, cfg.t3_dilation,
                             false);
  m.b_t2 = Conv2dLayer::make(rng, cfg.in_t2, K, 3, 1, cfg.t2_dilation, cfg.t2_dilation,
                             false);
  m.projection = Conv2dLayer::make(rng, 7 * K, cfg.projection_out, 1, 1, 0, 1, true);
  return m;
}

Var resize_to(const Var& x, int oh, int ow) {
  const int H = x.dim(2), W = x.dim(3);
  if (H == oh && W == ow) return x;
  if (H >= oh && W >= ow && H % oh == 0 && W % ow == 0)
    return adaptive_avg_pool2d(x, oh, ow);
  return bilinear_resize(x, oh, ow);
}

Var Maspp::fuse(const FeatureTaps& taps) const {
  require(taps.t2.defined() && taps.t3.defined() && taps.t4.defined(),
          "fuse needs all three feature taps");
  require(taps.t4.dim(1) == cfg.in_t4 && taps.t3.dim(1) == cfg.in_t3 &&
              taps.t2.dim(1) == cfg.in_t2,
          "feature tap channels do not match configuration");
  const int H = taps.t4.dim(2), W = taps.t4.dim(3);

  std::vector<Var> branches;
  branches.push_back(relu(b_point.forward(taps.t4)));
  for (const auto& conv : b_atrous) branches.push_back(relu(conv.forward(taps.t4)));
  // global context: pool to 1x1, project, broadcast back over the grid
  const Var pooled = adaptive_avg_pool2d(taps.t4, 1, 1);
  branches.push_back(bilinear_resize(relu(b_context.forward(pooled)), H, W));
  branches.push_back(resize_to(relu(b_t3.forward(taps.t3)), H, W));
  branches.push_back(resize_to(relu(b_t2.forward(taps.t2)), H, W));

  return projection.forward(concat(branches, 1));
}

void Maspp::collect(ParamSet& ps, const std::string& prefix) const {
  b_point.collect(ps, prefix + ".point");
  for (std::size_t i = 0; i < b_atrous.size(); ++i)
    b_atrous[i].collect(ps, prefix + ".atrous" + std::to_string(i));
  b_context.collect(ps, prefix + ".context");
  b_t3.collect(ps, prefix + ".t3");
  b_t2.collect(ps, prefix + ".t2");
  projection.collect(ps, prefix + ".projection");
}

}  // namespace arnet
