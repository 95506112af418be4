#include "arnet/nn.hpp"

#include <cmath>

namespace arnet {

Tensor he_normal(Rng& rng, Shape shape, std::int64_t fan_in) {
  require(fan_in > 0, "he_normal needs a positive fan-in");
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(fan_in)));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<Real>(dist(rng));
  return t;
}

Conv2dLayer Conv2dLayer::make(Rng& rng, int cin, int cout, int k, int stride, int pad,
                              int dil, bool bias) {
  Conv2dLayer l;
  l.stride = stride;
  l.pad = pad;
  l.dil = dil;
  l.w = Var::leaf(he_normal(rng, {cout, cin, k, k}, std::int64_t(cin) * k * k), true);
  if (bias) l.b = Var::leaf(Tensor({cout}), true);
  return l;
}

LinearLayer LinearLayer::make(Rng& rng, int in, int out) {
  LinearLayer l;
  l.w = Var::leaf(he_normal(rng, {out, in}, in), true);
  l.b = Var::leaf(Tensor({out}), true);
  return l;
}

}  // namespace arnet
