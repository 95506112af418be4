#pragma once

// Central finite-difference gradient checking.  Built only into the
// double-precision test binary: with float there is no usable window between
// truncation and roundoff error.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <doctest.h>

#include "arnet/autograd.hpp"

namespace gradcheck {

using arnet::Real;
using arnet::Tensor;
using arnet::Var;

inline Tensor random_tensor(std::mt19937_64& rng, arnet::Shape shape, double lo = -1.0,
                            double hi = 1.0, double dead_zone = 0.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    double v = d(rng);
    // keep samples away from kinks (relu/abs) when requested
    while (dead_zone > 0 && std::abs(v) < dead_zone) v = d(rng);
    t[i] = static_cast<Real>(v);
  }
  return t;
}

// Scalar-valued closure of the leaf tensors currently registered; re-runs the
// whole forward graph.  Must be deterministic.
using ScalarFn = std::function<double()>;

struct CheckResult {
  double max_rel = 0;
  std::int64_t checked = 0;
};

// Compares d(loss)/d(leaf[i]) from one backward pass against central
// differences.  `indices` empty means every element.
inline CheckResult fd_compare(const ScalarFn& loss_fn, Var leaf, const Tensor& analytic,
                              std::vector<std::int64_t> indices = {}, double h = 1e-5,
                              double tol = 1e-4) {
  Tensor& x = leaf.value_mut();
  if (indices.empty())
    for (std::int64_t i = 0; i < x.numel(); ++i) indices.push_back(i);
  CheckResult res;
  for (std::int64_t i : indices) {
    const double x0 = x[i];
    const double step = h * std::max(1.0, std::abs(x0));
    x[i] = static_cast<Real>(x0 + step);
    const double up = loss_fn();
    x[i] = static_cast<Real>(x0 - step);
    const double down = loss_fn();
    x[i] = static_cast<Real>(x0);
    const double numeric = (up - down) / (2 * step);
    const double a = analytic.empty() ? 0.0 : double(analytic[i]);
    const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (rel > res.max_rel) res.max_rel = rel;
    ++res.checked;
    CAPTURE(i);
    CAPTURE(a);
    CAPTURE(numeric);
    CHECK(rel <= tol);
  }
  return res;
}

// Convenience: builds the loss Var, runs backward once, then FD-checks the
// given leaves.  `build` must construct the graph from current leaf values.
inline void check_leaves(const std::function<Var()>& build, std::vector<Var> leaves,
                         double h = 1e-5, double tol = 1e-4,
                         std::int64_t max_per_leaf = 0) {
  for (auto& l : leaves) l.clear_grad();
  Var loss = build();
  arnet::backward(loss);
  const ScalarFn fn = [&build]() { return double(build().value()[0]); };
  std::mt19937_64 pick(99);
  for (auto& l : leaves) {
    REQUIRE(l.has_grad());
    std::vector<std::int64_t> idx;
    const std::int64_t n = l.value().numel();
    if (max_per_leaf > 0 && n > max_per_leaf) {
      for (std::int64_t k = 0; k < max_per_leaf; ++k)
        idx.push_back(static_cast<std::int64_t>(pick() % std::uint64_t(n)));
    }
    fd_compare(fn, l, l.grad(), idx, h, tol);
  }
}

}  // namespace gradcheck
