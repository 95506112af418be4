#include "arnet/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace arnet {

namespace {

const Var& pick_target(const ForwardTrace& t, const std::string& target) {
  if (target == "trunk.conv3") return t.trunk_conv;
  if (target == "attention.out") return t.attended;
  if (target == "maspp.out") return t.fused;
  throw DataError("unknown attribution target: " + target +
                  " (expected trunk.conv3, attention.out or maspp.out)");
}

std::vector<double> upsample_bilinear(const std::vector<double>& src, int h, int w,
                                      int oh, int ow) {
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  const double sy = double(h) / oh, sx = double(w) / ow;
  for (int y = 0; y < oh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    if (fy < 0) fy = 0;
    int y0 = std::min(static_cast<int>(fy), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < ow; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      if (fx < 0) fx = 0;
      int x0 = std::min(static_cast<int>(fx), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      const double top = src[std::size_t(y0) * w + x0] +
                         (src[std::size_t(y0) * w + x1] - src[std::size_t(y0) * w + x0]) * wx;
      const double bot = src[std::size_t(y1) * w + x0] +
                         (src[std::size_t(y1) * w + x1] - src[std::size_t(y1) * w + x0]) * wx;
      out[std::size_t(y) * ow + x] = top + (bot - top) * wy;
    }
  }
  return out;
}

Heatmap gradcam_impl(const ArNet& model, const Tensor& image, const Bits* fixed_actions,
                     const Bits* fixed_reasons, const std::string& target) {
  require(image.rank() == 4 && image.dim(0) == 1 && image.dim(1) == 3,
          "attribution expects a single (1,3,H,W) image");
  require(model.cfg.reason_input != ReasonInputMode::kOracle || fixed_actions,
          "oracle reason input requires ground-truth actions");

  const Var x = Var::leaf(image, false);
  Tensor oracle;
  const Tensor* oracle_ptr = nullptr;
  if (model.cfg.reason_input == ReasonInputMode::kOracle) {
    oracle = Tensor({1, kNumActions});
    for (int i = 0; i < kNumActions; ++i)
      oracle.at2(0, i) = static_cast<Real>((*fixed_actions)[static_cast<std::size_t>(i)]);
    oracle_ptr = &oracle;
  }
  const ForwardTrace trace = model.forward(x, oracle_ptr);
  const ModelOutput out = model.read_output(trace);

  const Bits& act = fixed_actions ? *fixed_actions : out.actions[0];
  const Bits& rea = fixed_reasons ? *fixed_reasons : out.reasons[0];
  if (!explanation_defined(act, rea))
    throw DataError("explanation undefined for this sample: no action or reason "
                    "cleared the decision threshold");

  Tensor mask_a({1, kNumActions}), mask_r({1, kNumReasons});
  for (int i = 0; i < kNumActions; ++i)
    mask_a.at2(0, i) = static_cast<Real>(act[static_cast<std::size_t>(i)]);
  for (int i = 0; i < kNumReasons; ++i)
    mask_r.at2(0, i) = static_cast<Real>(rea[static_cast<std::size_t>(i)]);
  const Var score = add(scale(masked_sum(trace.action_logits, mask_a), Real(0.5)),
                        scale(masked_sum(trace.reason_logits, mask_r), Real(0.5)));
  backward(score);

  const Var& tv = pick_target(trace, target);
  require(tv.has_grad(), "attribution target received no gradient");
  const Tensor& act_map = tv.value();
  const Tensor& grad_map = tv.grad();
  const int C = act_map.dim(1), h = act_map.dim(2), w = act_map.dim(3);

  Heatmap hm;
  hm.target = target;
  hm.map_h = h;
  hm.map_w = w;
  hm.raw.assign(static_cast<std::size_t>(h) * w, 0.0);
  for (int c = 0; c < C; ++c) {
    double wc = 0;  // channel weight: spatial mean of the gradient
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) wc += grad_map.at4(0, c, yy, xx);
    wc /= double(h) * w;
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx)
        hm.raw[std::size_t(yy) * w + xx] += wc * double(act_map.at4(0, c, yy, xx));
  }
  for (double& v : hm.raw) v = std::max(v, 0.0);

  hm.out_h = image.dim(2);
  hm.out_w = image.dim(3);
  hm.values = upsample_bilinear(hm.raw, h, w, hm.out_h, hm.out_w);
  const auto [mn_it, mx_it] = std::minmax_element(hm.values.begin(), hm.values.end());
  const double mn = *mn_it, mx = *mx_it;
  if (mx > mn) {
    for (double& v : hm.values) v = (v - mn) / (mx - mn);
  } else {
    // constant map: saturate if anything fired, stay dark otherwise
    std::fill(hm.values.begin(), hm.values.end(), mx > 0 ? 1.0 : 0.0);
  }

  for (int i = 0; i < kNumActions; ++i)
    if (act[static_cast<std::size_t>(i)])
      hm.terms.push_back({"action", i, kActionNames[static_cast<std::size_t>(i)],
                          double(trace.action_logits.value().at2(0, i))});
  for (int i = 0; i < kNumReasons; ++i)
    if (rea[static_cast<std::size_t>(i)])
      hm.terms.push_back({"reason", i, kReasonNames[static_cast<std::size_t>(i)],
                          double(trace.reason_logits.value().at2(0, i))});
  return hm;
}

}  // namespace

Heatmap gradcam(const ArNet& model, const Tensor& image, const std::string& target) {
  return gradcam_impl(model, image, nullptr, nullptr, target);
}

Heatmap gradcam_masked(const ArNet& model, const Tensor& image, const Bits& actions,
                       const Bits& reasons, const std::string& target) {
  require(actions.size() == kNumActions && reasons.size() == kNumReasons,
          "decision mask arity mismatch");
  return gradcam_impl(model, image, &actions, &reasons, target);
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && !a.empty(), "spearman needs equal non-empty vectors");
  const std::size_t n = a.size();
  auto ranks = [n](const std::vector<double>& v) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&v](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = (double(i) + double(j)) / 2.0 + 1.0;  // average rank, 1-based
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= double(n);
  mb /= double(n);
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0 || vb == 0) return 0.0;  // constant map: no meaningful ranking
  return cov / std::sqrt(va * vb);
}

SanityResult sanity_randomization(const ArNet& model, const Tensor& image, bool trained,
                                  const std::string& target, std::uint64_t seed) {
  SanityResult res;
  if (!trained) {
    res.applicable = false;
    return res;
  }
  const Var probe = Var::leaf(image, false);
  const ForwardTrace trace = model.forward(probe);
  const ModelOutput out = model.read_output(trace);
  const Bits act = out.actions[0], rea = out.reasons[0];
  const Heatmap reference = gradcam_masked(model, image, act, rea, target);
  res.stages.push_back({"intact", spearman(reference.raw, reference.raw)});

  static const char* kStages[] = {"reason_head", "action_head", "trunk.fc",
                                  "trunk.conv3", "attention",   "maspp",
                                  "backbone"};
  ArNet mutant = clone_model(model);
  Rng rng(seed);
  for (const char* stage : kStages) {
    ParamSet ps = mutant.parameters();
    for (auto& p : ps.params) {
      if (p.name.rfind(stage, 0) != 0) continue;
      Tensor& w = p.var.value_mut();
      if (w.rank() >= 2) {
        const std::int64_t fan_in = w.numel() / w.dim(0);
        w = he_normal(rng, w.shape(), fan_in);
      } else if (w.numel() == 1) {
        // connection coefficients: fresh draw around their init scale
        std::normal_distribution<double> d(0.0, 1.0);
        w[0] = static_cast<Real>(d(rng));
      } else {
        w.fill(Real(0));  // biases reset to their init value
      }
    }
    const Heatmap hm = gradcam_masked(mutant, image, act, rea, target);
    res.stages.push_back({stage, spearman(hm.raw, reference.raw)});
  }
  return res;
}

namespace {
void jet(double h, std::uint8_t& r, std::uint8_t& g, std::uint8_t& b) {
  auto ch = [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  r = ch(std::min(4.0 * h - 1.5, -4.0 * h + 4.5));
  g = ch(std::min(4.0 * h - 0.5, -4.0 * h + 3.5));
  b = ch(std::min(4.0 * h + 0.5, -4.0 * h + 2.5));
}
}  // namespace

ImageU8 render_overlay(const ImageU8& image, const Heatmap& hm, double alpha) {
  require(image.channels == 3, "overlay expects an RGB image");
  require(image.height == hm.out_h && image.width == hm.out_w,
          "size mismatch between image (" + std::to_string(image.width) + "x" +
              std::to_string(image.height) + ") and heatmap (" +
              std::to_string(hm.out_w) + "x" + std::to_string(hm.out_h) + ")");
  ImageU8 out = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const double h = hm.values[std::size_t(y) * image.width + x];
      if (h == 0.0) continue;  // untouched pixels stay byte-identical
      std::uint8_t cr, cg, cb;
      jet(h, cr, cg, cb);
      const double k = alpha * h;
      for (int c = 0; c < 3; ++c) {
        const double base = image.at(y, x, c);
        const double col = c == 0 ? cr : (c == 1 ? cg : cb);
        out.at(y, x, c) =
            static_cast<std::uint8_t>(std::lround((1 - k) * base + k * col));
      }
    }
  return out;
}

void write_explanation(const std::string& dir, const std::string& stem,
                       const ImageU8& image, const Heatmap& hm, const ModelOutput& out) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_png((fs::path(dir) / (stem + ".png")).string(), render_overlay(image, hm));

  auto round3 = [](double v) { return std::round(v * 1000.0) / 1000.0; };
  nlohmann::json j;
  j["target"] = hm.target;
  auto& terms = j["score_terms"] = nlohmann::json::array();
  for (const auto& t : hm.terms)
    terms.push_back({{"kind", t.kind},
                     {"index", t.index},
                     {"name", t.name},
                     {"logit", round3(t.logit)},
                     {"weight", 0.5}});
  auto probs3 = [&round3](const std::vector<double>& v) {
    std::vector<double> r;
    for (double p : v) r.push_back(round3(p));
    return r;
  };
  j["action_probs"] = probs3(out.action_probs[0]);
  j["reason_probs"] = probs3(out.reason_probs[0]);
  nlohmann::json acts = nlohmann::json::array(), reas = nlohmann::json::array();
  for (int i = 0; i < kNumActions; ++i)
    if (out.actions[0][static_cast<std::size_t>(i)])
      acts.push_back(kActionNames[static_cast<std::size_t>(i)]);
  for (int i = 0; i < kNumReasons; ++i)
    if (out.reasons[0][static_cast<std::size_t>(i)])
      reas.push_back(kReasonNames[static_cast<std::size_t>(i)]);
  j["actions"] = acts;
  j["reasons"] = reas;
  std::ofstream f((fs::path(dir) / (stem + ".json")).string());
  require(f.good(), "cannot write explanation sidecar");
  f << j.dump(2) << '\n';
}

}  // namespace arnet
