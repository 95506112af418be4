#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "arnet/tensor.hpp"

namespace arnet {

// Define-by-run reverse-mode autodiff.  Every op builds a Node holding its
// result plus a closure that routes the node's gradient to its inputs.  The
// graph for a batch dies when the last Var referencing it goes away; leaf
// parameters outlive graphs and accumulate gradients across backward calls
// until step()/zero_grad.

struct Node;
using NodeRef = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until first accumulation
  bool requires_grad = false;
  bool needs = false;  // this node or something upstream wants a gradient
  std::vector<NodeRef> inputs;
  std::function<void(Node&)> backward;

  void accumulate(const Tensor& delta);
  Tensor& ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(NodeRef n) : n_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(n_); }
  const Tensor& value() const { return n_->value; }
  Tensor& value_mut() { return n_->value; }  // in-place edits, e.g. SGD, FD probes
  const Tensor& grad() const { return n_->grad; }
  bool has_grad() const { return defined() && !n_->grad.empty(); }
  void clear_grad() { n_->grad = Tensor(); }
  bool requires_grad() const { return n_->requires_grad; }
  NodeRef node() const { return n_; }

  const Shape& shape() const { return n_->value.shape(); }
  int dim(int i) const { return n_->value.dim(i); }

 private:
  NodeRef n_;
};

// Runs reverse-mode accumulation from a single-element root.
void backward(const Var& root);

// ---- elementwise / structural ops (shapes broadcast where noted) ----
Var add(const Var& a, const Var& b);   // broadcasting
Var sub(const Var& a, const Var& b);   // broadcasting
Var mul(const Var& a, const Var& b);   // broadcasting
Var neg(const Var& a);
Var scale(const Var& a, Real s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
// 1 / clamp(x): |x| below eps is clamped to +-eps (x == 0 counts as positive);
// the clamped region is treated as locally constant, so its gradient is zero.
Var clamped_reciprocal(const Var& a, Real eps);
Var reshape(const Var& a, Shape s);
Var concat(const std::vector<Var>& parts, int axis);
Var detach(const Var& a);
Var sum_all(const Var& a);                       // -> shape (1)
Var masked_sum(const Var& a, const Tensor& mask);  // sum(a*mask) -> shape (1)

// ---- neural net ops ----
// x (B,Cin,H,W), w (Cout,Cin,kh,kw), optional bias (Cout); undefined bias Var
// means no bias term.
Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int padding,
           int dilation);
// x (B,n), w (m,n), optional bias (m) -> (B,m)
Var linear(const Var& x, const Var& w, const Var& bias);
Var adaptive_avg_pool2d(const Var& x, int oh, int ow);
Var adaptive_max_pool2d(const Var& x, int oh, int ow);
Var channel_mean(const Var& x);  // (B,C,H,W) -> (B,1,H,W)
Var channel_max(const Var& x);   // (B,C,H,W) -> (B,1,H,W)
Var bilinear_resize(const Var& x, int oh, int ow);  // align_corners=false

// Mean over rows of the weighted per-class binary cross entropy on logits:
//    (1/B) * sum_b sum_k w_k * (max(x,0) - x*y + log(1+exp(-|x|)))
// targets is a plain (B,K) tensor of 0/1; weights has length K.
Var bce_with_logits(const Var& logits, const Tensor& targets,
                    const std::vector<Real>& weights);

}  // namespace arnet
