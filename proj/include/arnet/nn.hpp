#pragma once

#include <random>
#include <string>
#include <vector>

#include "arnet/autograd.hpp"

namespace arnet {

using Rng = std::mt19937_64;

// Named trainable tensor.  `decay` marks participation in weight decay:
// biases, gains and attention mixing coefficients are excluded.
struct Param {
  std::string name;
  Var var;
  bool decay = true;
};

// Flat registry of a model's parameters, in registration order (which is
// also the SGD update order and the checkpoint order).
struct ParamSet {
  std::vector<Param> params;

  void add(std::string name, Var v, bool decay = true) {
    params.push_back({std::move(name), std::move(v), decay});
  }
  void zero_grad() {
    for (auto& p : params) p.var.clear_grad();
  }
  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.var.value().numel();
    return n;
  }
  const Param* find(const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }
};

Tensor he_normal(Rng& rng, Shape shape, std::int64_t fan_in);

struct Conv2dLayer {
  Var w, b;  // b undefined when the layer is bias-free
  int stride = 1, pad = 0, dil = 1;

  static Conv2dLayer make(Rng& rng, int cin, int cout, int k, int stride, int pad,
                          int dil = 1, bool bias = true);
  Var forward(const Var& x) const { return conv2d(x, w, b, stride, pad, dil); }
  void collect(ParamSet& ps, const std::string& prefix) const {
    ps.add(prefix + ".w", w, true);
    if (b.defined()) ps.add(prefix + ".b", b, false);
  }
};

struct LinearLayer {
  Var w, b;

  static LinearLayer make(Rng& rng, int in, int out);
  Var forward(const Var& x) const { return linear(x, w, b); }
  void collect(ParamSet& ps, const std::string& prefix) const {
    ps.add(prefix + ".w", w, true);
    ps.add(prefix + ".b", b, false);
  }
};

}  // namespace arnet
