#include "arnet/attention.hpp"

#include "arnet/maspp.hpp"  // resize_to

namespace arnet {

Var connect_direct(const Var& g, const Var& t, const Var& alpha, const Var& beta) {
  return add(mul(alpha, g), mul(beta, t));
}

Var connect_weighted(const Var& g, const Var& t, const Var& alpha, const Var& beta,
                     Real eps) {
  const Var a = mul(alpha, g);
  const Var b = mul(beta, t);
  const Var num = add(mul(a, a), mul(b, b));
  return mul(num, clamped_reciprocal(add(a, b), eps));
}

namespace {
Var scalar_param(Real v) { return Var::leaf(Tensor::scalar(v), true); }
}  // namespace

AttentionBlock AttentionBlock::make(Rng& rng, const AttentionConfig& cfg) {
  require(cfg.channels > 0 && cfg.reduction > 0, "bad attention configuration");
  require(cfg.channels % cfg.reduction == 0,
          "attention reduction must divide the channel count (" +
              std::to_string(cfg.channels) + " % " + std::to_string(cfg.reduction) +
              " != 0)");
  AttentionBlock blk;
  blk.cfg = cfg;
  const int C = cfg.channels, mid = cfg.channels / cfg.reduction;
  blk.mlp1 = LinearLayer::make(rng, C, mid);
  blk.mlp2 = LinearLayer::make(rng, mid, C);
  // identity initialization: with no carried state the block is plain CBAM,
  // and the carried-state terms start switched off
  blk.alpha_c = scalar_param(1);
  blk.beta_c = scalar_param(0);
  blk.wa1 = scalar_param(1);
  blk.wa2 = scalar_param(1);
  blk.ba = scalar_param(0);
  blk.wm1 = scalar_param(1);
  blk.wm2 = scalar_param(1);
  blk.bm = scalar_param(0);
  blk.p1 = scalar_param(1);
  blk.p2 = scalar_param(0);
  if (cfg.prev_channels > 0 && cfg.prev_channels != cfg.channels)
    blk.adapter =
        Conv2dLayer::make(rng, cfg.prev_channels, C, 1, 1, 0, 1, /*bias=*/false);
  blk.conv7 = Conv2dLayer::make(rng, 2, 1, 7, 1, 3);
  return blk;
}

AttentionBlock::Result AttentionBlock::forward(const Var& f,
                                               const AttentionState& prev) const {
  require(f.value().rank() == 4, "attention expects a rank-4 feature map");
  require(f.dim(1) == cfg.channels,
          "attention channel mismatch: got " + std::to_string(f.dim(1)) +
              ", configured " + std::to_string(cfg.channels));
  const int B = f.dim(0), C = cfg.channels, H = f.dim(2), W = f.dim(3);

  // ---- channel attention ----
  const Var u_avg = reshape(adaptive_avg_pool2d(f, 1, 1), {B, C});
  const Var u_max = reshape(adaptive_max_pool2d(f, 1, 1), {B, C});
  Var in_avg = u_avg, in_max = u_max;
  if (prev.channel.defined()) {
    Var carried = prev.channel;
    if (adapter.w.defined()) carried = adapter.forward(carried);
    require(carried.dim(1) == C,
            "carried channel state width " + std::to_string(prev.channel.dim(1)) +
                " does not match block width " + std::to_string(C));
    const Var t = reshape(carried, {B, C});
    // gate current vs carried, then merge per descriptor path
    in_avg = add(connect_direct(mul(alpha_c, u_avg), mul(beta_c, t), wa1, wa2), ba);
    in_max = add(connect_direct(mul(alpha_c, u_max), mul(beta_c, t), wm1, wm2), bm);
  }
  auto mlp = [this](const Var& v) { return mlp2.forward(relu(mlp1.forward(v))); };
  const Var channel_pre = reshape(add(mlp(in_avg), mlp(in_max)), {B, C, 1, 1});
  const Var channel_map = sigmoid(channel_pre);
  const Var f_ch = mul(f, channel_map);

  // ---- spatial attention ----
  const Var cur = concat({channel_mean(f_ch), channel_max(f_ch)}, 1);  // (B,2,H,W)
  Var comb = cur;
  if (prev.spatial.defined()) {
    const Var ps = resize_to(prev.spatial, H, W);
    const Var carried2 = concat({ps, ps}, 1);
    comb = connect_weighted(cur, carried2, p1, p2, cfg.eps);
  }
  const Var spatial_pre = conv7.forward(comb);  // (B,1,H,W)
  const Var spatial_map = sigmoid(spatial_pre);

  Result res;
  res.out = mul(f_ch, spatial_map);
  res.state = {channel_pre, spatial_pre};
  res.channel_map = channel_map;
  res.spatial_map = spatial_map;
  return res;
}

void AttentionBlock::collect(ParamSet& ps, const std::string& prefix) const {
  mlp1.collect(ps, prefix + ".mlp1");
  mlp2.collect(ps, prefix + ".mlp2");
  ps.add(prefix + ".alpha_c", alpha_c, false);
  ps.add(prefix + ".beta_c", beta_c, false);
  ps.add(prefix + ".wa1", wa1, false);
  ps.add(prefix + ".wa2", wa2, false);
  ps.add(prefix + ".ba", ba, false);
  ps.add(prefix + ".wm1", wm1, false);
  ps.add(prefix + ".wm2", wm2, false);
  ps.add(prefix + ".bm", bm, false);
  ps.add(prefix + ".p1", p1, false);
  ps.add(prefix + ".p2", p2, false);
  if (adapter.w.defined()) adapter.collect(ps, prefix + ".adapter");
  conv7.collect(ps, prefix + ".conv7");
}

AttentionChain AttentionChain::make(Rng& rng, int channels, int n_blocks, int reduction,
                                    Real eps) {
  require(n_blocks >= 1, "attention chain needs at least one block");
  AttentionChain chain;
  AttentionConfig cfg;
  cfg.channels = channels;
  cfg.reduction = reduction;
  cfg.eps = eps;
  for (int i = 0; i < n_blocks; ++i) chain.blocks.push_back(AttentionBlock::make(rng, cfg));
  return chain;
}

AttentionChain::Result AttentionChain::forward(const Var& f) const {
  Result res;
  Var x = f;
  AttentionState carry;  // first block has nothing carried in
  for (const auto& blk : blocks) {
    auto stage = blk.forward(x, carry);
    x = stage.out;
    carry = stage.state;
    res.stages.push_back(std::move(stage));
  }
  res.out = x;
  return res;
}

void AttentionChain::collect(ParamSet& ps, const std::string& prefix) const {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(ps, prefix + ".block" + std::to_string(i));
}

AttentionParamBreakdown attention_block_params(const AttentionConfig& cfg) {
  const std::int64_t C = cfg.channels, mid = cfg.channels / cfg.reduction;
  AttentionParamBreakdown b;
  b.mlp = C * mid + mid + mid * C + C;
  b.spatial_conv = 7 * 7 * 2 + 1;
  b.merge = 6;
  b.mixing = 4;
  if (cfg.prev_channels > 0 && cfg.prev_channels != cfg.channels)
    b.adapter = std::int64_t(cfg.prev_channels) * C;
  return b;
}

std::int64_t attention_params(const AttentionConfig& cfg, int n_blocks) {
  return attention_block_params(cfg).total() * n_blocks;
}

}  // namespace arnet
