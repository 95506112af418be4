#pragma once

#include <cstdint>
#include <string>

#include "arnet/dataset.hpp"
#include "arnet/nn.hpp"
#include "arnet/png_io.hpp"

namespace arnet {

// Procedural driving scenes with exactly known labels.  Rendering is pure
// integer rasterization, so a SceneSpec maps to one byte-exact image on every
// platform.

enum class LightState { kNone, kRed, kGreen };
// kEdge is a curb-colored road edge: no adjacent lane on that side.
enum class LaneMark { kNone, kDashed, kSolid, kEdge };
enum class ObstacleKind { kNone, kCar, kPedestrian, kRider, kOther };
enum class ArrowDir { kNone, kLeft, kRight };
enum class Indicator { kNone, kLeft, kRight };

struct LaneObstacle {
  ObstacleKind kind = ObstacleKind::kNone;
  bool near = false;      // close enough to force stopping (ego lane only)
  double lateral = 0.5;   // 0..1 placement jitter within the lane
  double depth = 0.5;     // 0..1 placement jitter along the lane
};

struct SceneSpec {
  LightState light = LightState::kNone;
  LaneMark left_mark = LaneMark::kNone;
  LaneMark right_mark = LaneMark::kNone;
  LaneObstacle ego, left, right;
  ArrowDir arrow = ArrowDir::kNone;        // painted lane arrow
  Indicator indicator = Indicator::kNone;  // front car's blinker (needs ego car)
  bool stop_sign = false;
  std::uint64_t seed = 0;  // identifies the sample; placement comes from the
                           // jitter fields, not from re-rolling
};

// Draws a spec from the documented scenario distribution (docs/synth.md).
SceneSpec sample_scene(Rng& rng);

// Rule-based ground truth; see docs/synth.md for the full table.
Labels oracle_labels(const SceneSpec& spec);

ImageU8 render_scene(const SceneSpec& spec, int height, int width);

struct SynthOptions {
  int height = 128;
  int width = 256;
  double train_frac = 0.7;
  double val_frac = 0.1;  // remainder is test
  double label_noise = 0.0;  // per-bit flip probability, off by default
};

struct SynthSummary {
  int total = 0, train = 0, val = 0, test = 0;
  ClassCounts counts;  // over all splits
};

// Writes images/ plus train/val/test manifests under out_dir.
SynthSummary generate_dataset(int n, std::uint64_t seed, const std::string& out_dir,
                              const SynthOptions& opts = {});

}  // namespace arnet
