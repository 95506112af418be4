#include "arnet/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace arnet {

namespace {

using MatR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatR>;
using CMapM = Eigen::Map<const MatR>;
using VecMap = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>;
using CVecMap = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>;

Var make_op(Tensor value, std::vector<Var> ins, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool needs = false;
  n->inputs.reserve(ins.size());
  for (auto& v : ins) {
    n->inputs.push_back(v.node());
    needs = needs || v.node()->needs;
  }
  n->needs = needs;
  if (needs) n->backward = std::move(bw);
  return Var(n);
}

// Right-aligned broadcasting: each dim pair must be equal or one of them 1.
struct Bcast {
  Shape out;
  std::vector<std::int64_t> sa, sb;  // strides per output dim, 0 where broadcast
};

Bcast bcast_plan(const Shape& a, const Shape& b) {
  const int r = std::max(a.size(), b.size());
  Shape pa(static_cast<std::size_t>(r), 1), pb(static_cast<std::size_t>(r), 1);
  std::copy(a.begin(), a.end(), pa.begin() + (r - static_cast<int>(a.size())));
  std::copy(b.begin(), b.end(), pb.begin() + (r - static_cast<int>(b.size())));
  Bcast p;
  p.out.resize(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    require(pa[i] == pb[i] || pa[i] == 1 || pb[i] == 1,
            "shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    p.out[i] = std::max(pa[i], pb[i]);
  }
  p.sa.assign(static_cast<std::size_t>(r), 0);
  p.sb.assign(static_cast<std::size_t>(r), 0);
  std::int64_t st = 1;
  for (int i = r - 1; i >= 0; --i) {
    if (pa[i] != 1) p.sa[i] = st;
    st *= pa[i];
  }
  st = 1;
  for (int i = r - 1; i >= 0; --i) {
    if (pb[i] != 1) p.sb[i] = st;
    st *= pb[i];
  }
  return p;
}

// Walks the broadcast output space once, handing the body the flat output
// index plus the offsets into both inputs.
template <class F>
void bcast_loop(const Bcast& p, F&& body) {
  const int r = static_cast<int>(p.out.size());
  const std::int64_t n = shape_numel(p.out);
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  std::int64_t offa = 0, offb = 0;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    body(flat, offa, offb);
    for (int k = r - 1; k >= 0; --k) {
      ++idx[k];
      offa += p.sa[k];
      offb += p.sb[k];
      if (idx[k] < p.out[k]) break;
      offa -= p.sa[k] * p.out[k];
      offb -= p.sb[k] * p.out[k];
      idx[k] = 0;
    }
  }
}

Real stable_sigmoid(Real x) {
  if (x >= 0) {
    const Real e = std::exp(-x);
    return Real(1) / (Real(1) + e);
  }
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

void check_rank4(const Var& x, const char* what) {
  require(x.value().rank() == 4, std::string(what) + " expects a rank-4 tensor, got " +
                                     shape_str(x.shape()));
}

}  // namespace

void Node::accumulate(const Tensor& delta) {
  Tensor& g = ensure_grad();
  const std::int64_t n = g.numel();
  require(delta.numel() == n, "gradient shape mismatch");
  for (std::int64_t i = 0; i < n; ++i) g[i] += delta[i];
}

Tensor& Node::ensure_grad() {
  if (grad.empty()) grad = Tensor(value.shape());
  return grad;
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->needs = requires_grad;
  return Var(n);
}

void backward(const Var& root) {
  require(root.defined() && root.value().numel() == 1,
          "backward expects a single-element root");
  struct Frame {
    Node* n;
    std::size_t next = 0;
  };
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Frame> stack;
  stack.push_back({root.node().get()});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->inputs.size()) {
      Node* child = f.n->inputs[f.next++].get();
      if (child->needs && !seen.count(child)) {
        seen.insert(child);
        stack.push_back({child});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad().fill(Real(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise / structural
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  Bcast p = bcast_plan(a.shape(), b.shape());
  Tensor out(p.out);
  const Tensor &av = a.value(), &bv = b.value();
  bcast_loop(p, [&](std::int64_t f, std::int64_t ia, std::int64_t ib) {
    out[f] = av[ia] + bv[ib];
  });
  return make_op(std::move(out), {a, b}, [p](Node& n) {
    Node *na = n.inputs[0].get(), *nb = n.inputs[1].get();
    Real* ga = na->needs ? na->ensure_grad().data() : nullptr;
    Real* gb = nb->needs ? nb->ensure_grad().data() : nullptr;
    const Tensor& g = n.grad;
    bcast_loop(p, [&](std::int64_t f, std::int64_t ia, std::int64_t ib) {
      if (ga) ga[ia] += g[f];
      if (gb) gb[ib] += g[f];
    });
  });
}

Var sub(const Var& a, const Var& b) {
  Bcast p = bcast_plan(a.shape(), b.shape());
  Tensor out(p.out);
  const Tensor &av = a.value(), &bv = b.value();
  bcast_loop(p, [&](std::int64_t f, std::int64_t ia, std::int64_t ib) {
    out[f] = av[ia] - bv[ib];
  });
  return make_op(std::move(out), {a, b}, [p](Node& n) {
    Node *na = n.inputs[0].get(), *nb = n.inputs[1].get();
    Real* ga = na->needs ? na->ensure_grad().data() : nullptr;
    Real* gb = nb->needs ? nb->ensure_grad().data() : nullptr;
    const Tensor& g = n.grad;
    bcast_loop(p, [&](std::int64_t f, std::int64_t ia, std::int64_t ib) {
      if (ga) ga[ia] += g[f];
      if (gb) gb[ib] -= g[f];
    });
  });
}

Var mul(const Var& a, const Var& b) {
  Bcast p = bcast_plan(a.shape(), b.shape());
  Tensor out(p.out);
  const Tensor &av = a.value(), &bv = b.value();
  bcast_loop(p, [&](std::int64_t f, std::int64_t ia, std::int64_t ib) {
    out[f] = av[ia] * bv[ib];
  });
  return make_op(std::move(out), {a, b}, [p](Node& n) {
    Node *na = n.inputs[0].get(), *nb = n.inputs[1].get();
    Real* ga = na->needs ? na->ensure_grad().data() : nullptr;
    Real* gb = nb->needs ? nb->ensure_grad().data() : nullptr;
    const Tensor &av = na->value, &bv = nb->value;
    const Tensor& g = n.grad;
    bcast_loop(p, [&](std::int64_t f, std::int64_t ia, std::int64_t ib) {
      if (ga) ga[ia] += g[f] * bv[ib];
      if (gb) gb[ib] += g[f] * av[ia];
    });
  });
}

Var neg(const Var& a) { return scale(a, Real(-1)); }

Var scale(const Var& a, Real s) {
  Tensor out(a.shape());
  const Tensor& av = a.value();
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] * s;
  return make_op(std::move(out), {a}, [s](Node& n) {
    Node* na = n.inputs[0].get();
    if (!na->needs) return;
    Tensor& ga = na->ensure_grad();
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += n.grad[i] * s;
  });
}

Var relu(const Var& a) {
  Tensor out(a.shape());
  const Tensor& av = a.value();
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] > 0 ? av[i] : Real(0);
  return make_op(std::move(out), {a}, [](Node& n) {
    Node* na = n.inputs[0].get();
    if (!na->needs) return;
    Tensor& ga = na->ensure_grad();
    const Tensor& av = na->value;
    for (std::int64_t i = 0; i < n.grad.numel(); ++i)
      if (av[i] > 0) ga[i] += n.grad[i];
  });
}

Var sigmoid(const Var& a) {
  Tensor out(a.shape());
  const Tensor& av = a.value();
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = stable_sigmoid(av[i]);
  return make_op(std::move(out), {a}, [](Node& n) {
    Node* na = n.inputs[0].get();
    if (!na->needs) return;
    Tensor& ga = na->ensure_grad();
    const Tensor& y = n.value;
    for (std::int64_t i = 0; i < n.grad.numel(); ++i)
      ga[i] += n.grad[i] * y[i] * (Real(1) - y[i]);
  });
}

Var clamped_reciprocal(const Var& a, Real eps) {
  require(eps > 0, "clamped_reciprocal needs a positive epsilon");
  Tensor out(a.shape());
  const Tensor& av = a.value();
  for (std::int64_t i = 0; i < av.numel(); ++i) {
    Real x = av[i];
    if (x >= 0 && x < eps) x = eps;          // zero counts as positive
    else if (x < 0 && x > -eps) x = -eps;
    out[i] = Real(1) / x;
  }
  return make_op(std::move(out), {a}, [eps](Node& n) {
    Node* na = n.inputs[0].get();
    if (!na->needs) return;
    Tensor& ga = na->ensure_grad();
    const Tensor& av = na->value;
    const Tensor& y = n.value;
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
      if (av[i] >= eps || av[i] <= -eps) ga[i] -= n.grad[i] * y[i] * y[i];
      // inside the clamp the op is locally constant
    }
  });
}

Var reshape(const Var& a, Shape s) {
  // -1 in one slot means "whatever makes the element count work"
  std::int64_t known = 1;
  int hole = -1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == -1) {
      require(hole < 0, "reshape allows at most one -1 dimension");
      hole = static_cast<int>(i);
    } else {
      known *= s[i];
    }
  }
  if (hole >= 0) {
    require(known > 0 && a.value().numel() % known == 0,
            "reshape cannot infer dimension for " + shape_str(a.shape()));
    s[static_cast<std::size_t>(hole)] = static_cast<int>(a.value().numel() / known);
  }
  Tensor out = a.value().reshaped(s);
  Shape in_shape = a.shape();
  return make_op(std::move(out), {a}, [in_shape](Node& n) {
    Node* na = n.inputs[0].get();
    if (!na->needs) return;
    na->accumulate(n.grad.reshaped(in_shape));
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  require(!parts.empty(), "concat of zero tensors");
  const int rank = parts[0].value().rank();
  require(axis >= 0 && axis < rank, "concat axis out of range");
  Shape out_shape = parts[0].shape();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    require(static_cast<int>(s.size()) == rank, "concat rank mismatch");
    for (int d = 0; d < rank; ++d)
      require(d == axis || s[d] == out_shape[d],
              "concat shape mismatch at " + shape_str(s));
  }
  int axis_total = 0;
  for (const auto& p : parts) axis_total += p.dim(axis);
  out_shape[static_cast<std::size_t>(axis)] = axis_total;

  std::int64_t outer = 1, tail = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[d];
  for (int d = axis + 1; d < rank; ++d) tail *= out_shape[d];

  Tensor out(out_shape);
  std::vector<std::int64_t> slab(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i)
    slab[i] = static_cast<std::int64_t>(parts[i].dim(axis)) * tail;
  const std::int64_t out_slab = static_cast<std::int64_t>(axis_total) * tail;

  for (std::int64_t o = 0; o < outer; ++o) {
    std::int64_t at = o * out_slab;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const Real* src = parts[i].value().data() + o * slab[i];
      std::memcpy(out.data() + at, src, static_cast<std::size_t>(slab[i]) * sizeof(Real));
      at += slab[i];
    }
  }
  return make_op(std::move(out), parts, [outer, out_slab, slab](Node& n) {
    for (std::int64_t o = 0; o < outer; ++o) {
      std::int64_t at = o * out_slab;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        Node* ni = n.inputs[i].get();
        if (ni->needs) {
          Real* dst = ni->ensure_grad().data() + o * slab[i];
          const Real* src = n.grad.data() + at;
          for (std::int64_t k = 0; k < slab[i]; ++k) dst[k] += src[k];
        }
        at += slab[i];
      }
    }
  });
}

Var detach(const Var& a) { return Var::leaf(a.value(), false); }

Var sum_all(const Var& a) {
  double s = 0;
  const Tensor& av = a.value();
  for (std::int64_t i = 0; i < av.numel(); ++i) s += av[i];
  return make_op(Tensor::scalar(static_cast<Real>(s)), {a}, [](Node& n) {
    Node* na = n.inputs[0].get();
    if (!na->needs) return;
    Tensor& ga = na->ensure_grad();
    const Real g = n.grad[0];
    for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

Var masked_sum(const Var& a, const Tensor& mask) {
  require(mask.numel() == a.value().numel(), "masked_sum mask shape mismatch");
  double s = 0;
  const Tensor& av = a.value();
  for (std::int64_t i = 0; i < av.numel(); ++i) s += double(av[i]) * double(mask[i]);
  return make_op(Tensor::scalar(static_cast<Real>(s)), {a}, [mask](Node& n) {
    Node* na = n.inputs[0].get();
    if (!na->needs) return;
    Tensor& ga = na->ensure_grad();
    const Real g = n.grad[0];
    for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += g * mask[i];
  });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace {

struct ConvGeom {
  int B, Cin, H, W, Cout, kh, kw, stride, pad, dil, Ho, Wo;
  std::int64_t ck() const { return std::int64_t(Cin) * kh * kw; }
  std::int64_t osp() const { return std::int64_t(Ho) * Wo; }
};

// Valid output-x range for a kernel column: ox in [lo,hi) hits in-bounds input.
void ox_range(int W, int Wo, int stride, int pad, int kx, int dil, int& lo, int& hi) {
  const int off = kx * dil - pad;  // ix = ox*stride + off
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  const int num = W - 1 - off;
  hi = num < 0 ? 0 : std::min(Wo, num / stride + 1);
  if (hi < lo) hi = lo;
}

void im2col(const Real* x, const ConvGeom& g, Real* col) {
  const std::int64_t osp = g.osp();
  for (int ci = 0; ci < g.Cin; ++ci) {
    const Real* xc = x + std::int64_t(ci) * g.H * g.W;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        Real* row = col + (std::int64_t(ci) * g.kh * g.kw + std::int64_t(ky) * g.kw + kx) * osp;
        int lo, hi;
        ox_range(g.W, g.Wo, g.stride, g.pad, kx, g.dil, lo, hi);
        const int offx = kx * g.dil - g.pad;
        for (int oy = 0; oy < g.Ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dil;
          Real* dst = row + std::int64_t(oy) * g.Wo;
          if (iy < 0 || iy >= g.H) {
            std::memset(dst, 0, sizeof(Real) * static_cast<std::size_t>(g.Wo));
            continue;
          }
          const Real* src = xc + std::int64_t(iy) * g.W;
          for (int ox = 0; ox < lo; ++ox) dst[ox] = 0;
          if (g.stride == 1) {
            if (hi > lo)
              std::memcpy(dst + lo, src + lo + offx,
                          sizeof(Real) * static_cast<std::size_t>(hi - lo));
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride + offx];
          }
          for (int ox = hi; ox < g.Wo; ++ox) dst[ox] = 0;
        }
      }
    }
  }
}

void col2im_add(const Real* col, const ConvGeom& g, Real* dx) {
  const std::int64_t osp = g.osp();
  for (int ci = 0; ci < g.Cin; ++ci) {
    Real* xc = dx + std::int64_t(ci) * g.H * g.W;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const Real* row =
            col + (std::int64_t(ci) * g.kh * g.kw + std::int64_t(ky) * g.kw + kx) * osp;
        int lo, hi;
        ox_range(g.W, g.Wo, g.stride, g.pad, kx, g.dil, lo, hi);
        const int offx = kx * g.dil - g.pad;
        for (int oy = 0; oy < g.Ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dil;
          if (iy < 0 || iy >= g.H) continue;
          const Real* src = row + std::int64_t(oy) * g.Wo;
          Real* dst = xc + std::int64_t(iy) * g.W;
          for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride + offx] += src[ox];
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int padding,
           int dilation) {
  check_rank4(x, "conv2d input");
  check_rank4(w, "conv2d weight");
  require(stride >= 1 && dilation >= 1 && padding >= 0, "bad conv2d geometry");
  ConvGeom g;
  g.B = x.dim(0);
  g.Cin = x.dim(1);
  g.H = x.dim(2);
  g.W = x.dim(3);
  g.Cout = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = stride;
  g.pad = padding;
  g.dil = dilation;
  require(w.dim(1) == g.Cin, "conv2d channel mismatch: input has " +
                                 std::to_string(g.Cin) + ", weight expects " +
                                 std::to_string(w.dim(1)));
  require(g.B > 0, "empty batch");
  g.Ho = (g.H + 2 * padding - dilation * (g.kh - 1) - 1) / stride + 1;
  g.Wo = (g.W + 2 * padding - dilation * (g.kw - 1) - 1) / stride + 1;
  require((g.H + 2 * padding - dilation * (g.kh - 1) - 1) >= 0 &&
              (g.W + 2 * padding - dilation * (g.kw - 1) - 1) >= 0,
          "conv2d kernel does not fit input " + shape_str(x.shape()));
  if (bias.defined())
    require(bias.value().rank() == 1 && bias.dim(0) == g.Cout,
            "conv2d bias shape mismatch");

  const std::int64_t ck = g.ck(), osp = g.osp();
  Tensor out({g.B, g.Cout, g.Ho, g.Wo});
  {
    std::vector<Real> col(static_cast<std::size_t>(ck * osp));
    CMapM Wm(w.value().data(), g.Cout, ck);
    for (int b = 0; b < g.B; ++b) {
      im2col(x.value().data() + std::int64_t(b) * g.Cin * g.H * g.W, g, col.data());
      CMapM Cm(col.data(), ck, osp);
      MapM Ym(out.data() + std::int64_t(b) * g.Cout * osp, g.Cout, osp);
      Ym.noalias() = Wm * Cm;
      if (bias.defined()) {
        CVecMap bv(bias.value().data(), g.Cout);
        Ym.colwise() += bv;
      }
    }
  }

  std::vector<Var> ins{x, w};
  if (bias.defined()) ins.push_back(bias);
  return make_op(std::move(out), std::move(ins), [g, ck, osp](Node& n) {
    Node* nx = n.inputs[0].get();
    Node* nw = n.inputs[1].get();
    Node* nb = n.inputs.size() > 2 ? n.inputs[2].get() : nullptr;
    const bool need_x = nx->needs, need_w = nw->needs,
               need_b = nb && nb->needs;
    if (!need_x && !need_w && !need_b) return;

    std::vector<Real> col(need_w || need_x ? static_cast<std::size_t>(ck * osp) : 0);
    std::vector<Real> dcol(need_x ? static_cast<std::size_t>(ck * osp) : 0);
    CMapM Wm(nw->value.data(), g.Cout, ck);
    for (int b = 0; b < g.B; ++b) {
      CMapM dYm(n.grad.data() + std::int64_t(b) * g.Cout * osp, g.Cout, osp);
      if (need_w || need_x)
        im2col(nx->value.data() + std::int64_t(b) * g.Cin * g.H * g.W, g, col.data());
      CMapM Cm(col.data(), ck, osp);
      if (need_w) {
        MapM dWm(nw->ensure_grad().data(), g.Cout, ck);
        dWm.noalias() += dYm * Cm.transpose();
      }
      if (need_b) {
        // Summed by hand: Eigen's reduction order shifts with buffer
        // alignment, which would make repeated runs disagree in the last ulp.
        Tensor& gb = nb->ensure_grad();
        const Real* gy = n.grad.data() + std::int64_t(b) * g.Cout * osp;
        for (int c = 0; c < g.Cout; ++c) {
          double s = 0;
          const Real* row = gy + std::int64_t(c) * osp;
          for (std::int64_t i = 0; i < osp; ++i) s += row[i];
          gb[c] += static_cast<Real>(s);
        }
      }
      if (need_x) {
        MapM dCm(dcol.data(), ck, osp);
        dCm.noalias() = Wm.transpose() * dYm;
        col2im_add(dcol.data(), g,
                   nx->ensure_grad().data() + std::int64_t(b) * g.Cin * g.H * g.W);
      }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  require(x.value().rank() == 2 && w.value().rank() == 2,
          "linear expects rank-2 input and weight");
  const int B = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  require(w.dim(1) == in, "linear shape mismatch: input " + shape_str(x.shape()) +
                              " vs weight " + shape_str(w.shape()));
  require(B > 0, "empty batch");
  if (bias.defined())
    require(bias.value().rank() == 1 && bias.dim(0) == out_dim,
            "linear bias shape mismatch");

  Tensor out({B, out_dim});
  {
    CMapM Xm(x.value().data(), B, in);
    CMapM Wm(w.value().data(), out_dim, in);
    MapM Ym(out.data(), B, out_dim);
    Ym.noalias() = Xm * Wm.transpose();
    if (bias.defined()) {
      CVecMap bv(bias.value().data(), out_dim);
      Ym.rowwise() += bv.transpose();
    }
  }
  std::vector<Var> ins{x, w};
  if (bias.defined()) ins.push_back(bias);
  return make_op(std::move(out), std::move(ins), [B, in, out_dim](Node& n) {
    Node* nx = n.inputs[0].get();
    Node* nw = n.inputs[1].get();
    Node* nb = n.inputs.size() > 2 ? n.inputs[2].get() : nullptr;
    CMapM dYm(n.grad.data(), B, out_dim);
    if (nx->needs) {
      CMapM Wm(nw->value.data(), out_dim, in);
      MapM dXm(nx->ensure_grad().data(), B, in);
      dXm.noalias() += dYm * Wm;
    }
    if (nw->needs) {
      CMapM Xm(nx->value.data(), B, in);
      MapM dWm(nw->ensure_grad().data(), out_dim, in);
      dWm.noalias() += dYm.transpose() * Xm;
    }
    if (nb && nb->needs) {
      Tensor& gb = nb->ensure_grad();
      const Real* gy = n.grad.data();
      for (int j = 0; j < out_dim; ++j) {
        double s = 0;
        for (int r = 0; r < B; ++r) s += gy[std::int64_t(r) * out_dim + j];
        gb[j] += static_cast<Real>(s);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// pooling / resampling
// ---------------------------------------------------------------------------

namespace {
inline void adaptive_window(int i, int in, int out, int& lo, int& hi) {
  lo = (i * in) / out;
  hi = ((i + 1) * in + out - 1) / out;
}
}  // namespace

Var adaptive_avg_pool2d(const Var& x, int oh, int ow) {
  check_rank4(x, "adaptive_avg_pool2d");
  require(oh >= 1 && ow >= 1, "bad pool size");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out({B, C, oh, ow});
  const Tensor& xv = x.value();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < oh; ++oy) {
        int y0, y1;
        adaptive_window(oy, H, oh, y0, y1);
        for (int ox = 0; ox < ow; ++ox) {
          int x0, x1;
          adaptive_window(ox, W, ow, x0, x1);
          double s = 0;
          for (int iy = y0; iy < y1; ++iy)
            for (int ix = x0; ix < x1; ++ix) s += xv.at4(b, c, iy, ix);
          out.at4(b, c, oy, ox) = static_cast<Real>(s / ((y1 - y0) * (x1 - x0)));
        }
      }
  return make_op(std::move(out), {x}, [B, C, H, W, oh, ow](Node& n) {
    Node* nx = n.inputs[0].get();
    if (!nx->needs) return;
    Tensor& gx = nx->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < oh; ++oy) {
          int y0, y1;
          adaptive_window(oy, H, oh, y0, y1);
          for (int ox = 0; ox < ow; ++ox) {
            int x0, x1;
            adaptive_window(ox, W, ow, x0, x1);
            const Real g =
                n.grad.at4(b, c, oy, ox) / static_cast<Real>((y1 - y0) * (x1 - x0));
            for (int iy = y0; iy < y1; ++iy)
              for (int ix = x0; ix < x1; ++ix) gx.at4(b, c, iy, ix) += g;
          }
        }
  });
}

Var adaptive_max_pool2d(const Var& x, int oh, int ow) {
  check_rank4(x, "adaptive_max_pool2d");
  require(oh >= 1 && ow >= 1, "bad pool size");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out({B, C, oh, ow});
  auto arg = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(out.numel()));
  const Tensor& xv = x.value();
  std::int64_t k = 0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < oh; ++oy) {
        int y0, y1;
        adaptive_window(oy, H, oh, y0, y1);
        for (int ox = 0; ox < ow; ++ox, ++k) {
          int x0, x1;
          adaptive_window(ox, W, ow, x0, x1);
          Real best = xv.at4(b, c, y0, x0);
          std::int64_t bi = ((std::int64_t(b) * C + c) * H + y0) * W + x0;
          for (int iy = y0; iy < y1; ++iy)
            for (int ix = x0; ix < x1; ++ix) {
              const Real v = xv.at4(b, c, iy, ix);
              if (v > best) {
                best = v;
                bi = ((std::int64_t(b) * C + c) * H + iy) * W + ix;
              }
            }
          out[k] = best;
          (*arg)[static_cast<std::size_t>(k)] = bi;
        }
      }
  return make_op(std::move(out), {x}, [arg](Node& n) {
    Node* nx = n.inputs[0].get();
    if (!nx->needs) return;
    Tensor& gx = nx->ensure_grad();
    for (std::int64_t i = 0; i < n.grad.numel(); ++i)
      gx[(*arg)[static_cast<std::size_t>(i)]] += n.grad[i];
  });
}

Var channel_mean(const Var& x) {
  check_rank4(x, "channel_mean");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out({B, 1, H, W});
  const Tensor& xv = x.value();
  const std::int64_t sp = std::int64_t(H) * W;
  for (int b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < sp; ++i) {
      double s = 0;
      for (int c = 0; c < C; ++c) s += xv[(std::int64_t(b) * C + c) * sp + i];
      out[std::int64_t(b) * sp + i] = static_cast<Real>(s / C);
    }
  return make_op(std::move(out), {x}, [B, C, sp](Node& n) {
    Node* nx = n.inputs[0].get();
    if (!nx->needs) return;
    Tensor& gx = nx->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < sp; ++i) {
        const Real g = n.grad[std::int64_t(b) * sp + i] / static_cast<Real>(C);
        for (int c = 0; c < C; ++c) gx[(std::int64_t(b) * C + c) * sp + i] += g;
      }
  });
}

Var channel_max(const Var& x) {
  check_rank4(x, "channel_max");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out({B, 1, H, W});
  const std::int64_t sp = std::int64_t(H) * W;
  auto arg = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(out.numel()));
  const Tensor& xv = x.value();
  for (int b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < sp; ++i) {
      Real best = xv[std::int64_t(b) * C * sp + i];
      std::int64_t bi = std::int64_t(b) * C * sp + i;
      for (int c = 1; c < C; ++c) {
        const std::int64_t at = (std::int64_t(b) * C + c) * sp + i;
        if (xv[at] > best) {
          best = xv[at];
          bi = at;
        }
      }
      out[std::int64_t(b) * sp + i] = best;
      (*arg)[static_cast<std::size_t>(std::int64_t(b) * sp + i)] = bi;
    }
  return make_op(std::move(out), {x}, [arg](Node& n) {
    Node* nx = n.inputs[0].get();
    if (!nx->needs) return;
    Tensor& gx = nx->ensure_grad();
    for (std::int64_t i = 0; i < n.grad.numel(); ++i)
      gx[(*arg)[static_cast<std::size_t>(i)]] += n.grad[i];
  });
}

namespace {
struct LerpTap {
  int i0, i1;
  Real f;  // weight of i1
};
LerpTap resize_tap(int o, int in, double scale) {
  double s = (o + 0.5) * scale - 0.5;
  if (s < 0) s = 0;
  int i0 = static_cast<int>(s);
  if (i0 > in - 1) i0 = in - 1;
  const Real f = static_cast<Real>(s - i0);
  const int i1 = std::min(i0 + 1, in - 1);
  return {i0, i1, f};
}
}  // namespace

Var bilinear_resize(const Var& x, int oh, int ow) {
  check_rank4(x, "bilinear_resize");
  require(oh >= 1 && ow >= 1, "bad resize target");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const double sy = double(H) / oh, sx = double(W) / ow;
  Tensor out({B, C, oh, ow});
  const Tensor& xv = x.value();
  for (int oy = 0; oy < oh; ++oy) {
    const LerpTap ty = resize_tap(oy, H, sy);
    for (int ox = 0; ox < ow; ++ox) {
      const LerpTap tx = resize_tap(ox, W, sx);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const Real v00 = xv.at4(b, c, ty.i0, tx.i0), v01 = xv.at4(b, c, ty.i0, tx.i1);
          const Real v10 = xv.at4(b, c, ty.i1, tx.i0), v11 = xv.at4(b, c, ty.i1, tx.i1);
          const Real top = v00 + (v01 - v00) * tx.f;
          const Real bot = v10 + (v11 - v10) * tx.f;
          out.at4(b, c, oy, ox) = top + (bot - top) * ty.f;
        }
    }
  }
  return make_op(std::move(out), {x}, [B, C, H, W, oh, ow, sy, sx](Node& n) {
    Node* nx = n.inputs[0].get();
    if (!nx->needs) return;
    Tensor& gx = nx->ensure_grad();
    for (int oy = 0; oy < oh; ++oy) {
      const LerpTap ty = resize_tap(oy, H, sy);
      for (int ox = 0; ox < ow; ++ox) {
        const LerpTap tx = resize_tap(ox, W, sx);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const Real g = n.grad.at4(b, c, oy, ox);
            gx.at4(b, c, ty.i0, tx.i0) += g * (1 - ty.f) * (1 - tx.f);
            gx.at4(b, c, ty.i0, tx.i1) += g * (1 - ty.f) * tx.f;
            gx.at4(b, c, ty.i1, tx.i0) += g * ty.f * (1 - tx.f);
            gx.at4(b, c, ty.i1, tx.i1) += g * ty.f * tx.f;
          }
      }
    }
  });
}

Var bce_with_logits(const Var& logits, const Tensor& targets,
                    const std::vector<Real>& weights) {
  require(logits.value().rank() == 2, "bce_with_logits expects (batch, classes)");
  const int B = logits.dim(0), K = logits.dim(1);
  require(B > 0, "empty batch");
  require(targets.rank() == 2 && targets.dim(0) == B && targets.dim(1) == K,
          "bce_with_logits target shape mismatch");
  require(static_cast<int>(weights.size()) == K,
          "bce_with_logits needs one weight per class");
  const Tensor& xv = logits.value();
  double total = 0;
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < K; ++k) {
      const double x = xv.at2(b, k), y = targets.at2(b, k);
      const double term = std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
      total += double(weights[static_cast<std::size_t>(k)]) * term;
    }
  Tensor out = Tensor::scalar(static_cast<Real>(total / B));
  return make_op(std::move(out), {logits}, [targets, weights, B, K](Node& n) {
    Node* nx = n.inputs[0].get();
    if (!nx->needs) return;
    Tensor& gx = nx->ensure_grad();
    const Real g = n.grad[0];
    const Tensor& xv = nx->value;
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < K; ++k) {
        const double x = xv.at2(b, k);
        const double sig = 1.0 / (1.0 + std::exp(-x));
        gx.at2(b, k) += g * weights[static_cast<std::size_t>(k)] *
                        static_cast<Real>((sig - targets.at2(b, k)) / B);
      }
  });
}

}  // namespace arnet
