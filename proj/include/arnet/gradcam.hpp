#pragma once

#include "arnet/model.hpp"
#include "arnet/png_io.hpp"

namespace arnet {

// Gradient-weighted class activation mapping over the decided outputs: the
// attribution score is 0.5 * (sum of decided action logits) + 0.5 * (sum of
// decided reason logits).  A sample with no decided action and no decided
// reason has no explanation to attribute and is an error.

struct HeatmapTerm {
  std::string kind;  // "action" or "reason"
  int index = 0;
  std::string name;
  double logit = 0;
};

struct Heatmap {
  std::string target;        // which activation the map was taken from
  int map_h = 0, map_w = 0;  // raw grid
  std::vector<double> raw;   // post-ReLU, pre-normalization, map_h*map_w
  int out_h = 0, out_w = 0;  // bilinear-upsampled grid
  std::vector<double> values;  // normalized to [0,1]; constant maps become
                               // all-ones if positive, all-zeros otherwise
  std::vector<HeatmapTerm> terms;
};

// Valid targets: "trunk.conv3" (default), "attention.out", "maspp.out".
// `image` is one normalized input (1,3,H,W).
Heatmap gradcam(const ArNet& model, const Tensor& image,
                const std::string& target = "trunk.conv3");

// Same map but with the score composed from caller-fixed decision masks —
// used by the randomization test, which keeps the original sample's decided
// set frozen while the weights degrade.
Heatmap gradcam_masked(const ArNet& model, const Tensor& image, const Bits& actions,
                       const Bits& reasons, const std::string& target = "trunk.conv3");

// Spearman rank correlation with average ranks on ties; 0 when either side
// has no variance.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct SanityStage {
  std::string stage;     // parameter prefix randomized at this step (cumulative)
  double correlation = 0;  // heatmap rank correlation against the intact model
};

struct SanityResult {
  bool applicable = true;  // false for an untrained model
  std::vector<SanityStage> stages;
};

// Cascading randomization from the heads down to the backbone.  Weights are
// progressively re-randomized (cumulatively); after each stage the heatmap is
// recomputed with the original sample's decision masks and compared against
// the intact model's map.
SanityResult sanity_randomization(const ArNet& model, const Tensor& image, bool trained,
                                  const std::string& target = "trunk.conv3",
                                  std::uint64_t seed = 123);

// Alpha-blends a jet-style colormap over the image; pixels where the map is
// exactly zero stay byte-identical to the input.
ImageU8 render_overlay(const ImageU8& image, const Heatmap& hm, double alpha = 0.6);

// Overlay PNG plus a JSON sidecar (decisions, probabilities rounded to three
// decimals, score terms).  Writes <stem>.png and <stem>.json under dir.
void write_explanation(const std::string& dir, const std::string& stem,
                       const ImageU8& image, const Heatmap& hm, const ModelOutput& out);

}  // namespace arnet
