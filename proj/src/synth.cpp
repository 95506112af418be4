#include "arnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace arnet {

namespace fs = std::filesystem;

namespace {

// Portable uniform draw (uniform_real_distribution's algorithm is not pinned
// by the standard).
double unit(Rng& rng) { return double(rng() >> 11) * 0x1.0p-53; }

int pick(Rng& rng, std::initializer_list<double> weights) {
  double u = unit(rng), acc = 0;
  int i = 0;
  for (double w : weights) {
    acc += w;
    if (u < acc) return i;
    ++i;
  }
  return static_cast<int>(weights.size()) - 1;
}

}  // namespace

SceneSpec sample_scene(Rng& rng) {
  SceneSpec s;
  s.light = static_cast<LightState>(pick(rng, {0.20, 0.35, 0.45}));
  s.left_mark = static_cast<LaneMark>(pick(rng, {0.25, 0.25, 0.25, 0.25}));
  s.right_mark = static_cast<LaneMark>(pick(rng, {0.25, 0.25, 0.25, 0.25}));

  auto draw_obstacle = [&rng](std::initializer_list<double> kind_w, double near_p) {
    LaneObstacle o;
    o.kind = static_cast<ObstacleKind>(pick(rng, kind_w));
    const double u_near = unit(rng);
    o.near = o.kind != ObstacleKind::kNone && u_near < near_p;
    o.lateral = unit(rng);
    o.depth = unit(rng);
    return o;
  };
  s.ego = draw_obstacle({0.45, 0.30, 0.10, 0.08, 0.07}, 0.60);
  s.left = draw_obstacle({0.60, 0.20, 0.08, 0.06, 0.06}, 0.0);
  s.right = draw_obstacle({0.60, 0.20, 0.08, 0.06, 0.06}, 0.0);

  s.arrow = static_cast<ArrowDir>(pick(rng, {0.50, 0.25, 0.25}));
  s.indicator = static_cast<Indicator>(pick(rng, {0.50, 0.25, 0.25}));
  if (s.ego.kind != ObstacleKind::kCar) s.indicator = Indicator::kNone;
  s.stop_sign = unit(rng) < 0.15;
  return s;
}

Labels oracle_labels(const SceneSpec& s) {
  const bool red = s.light == LightState::kRed;
  const bool green = s.light == LightState::kGreen;
  const bool ego_present = s.ego.kind != ObstacleKind::kNone;
  const bool ego_near = ego_present && s.ego.near;
  const bool ego_far_car = s.ego.kind == ObstacleKind::kCar && !s.ego.near;
  const bool ind_left = s.ego.kind == ObstacleKind::kCar && s.indicator == Indicator::kLeft;
  const bool ind_right =
      s.ego.kind == ObstacleKind::kCar && s.indicator == Indicator::kRight;

  const bool stop = red || ego_near || s.stop_sign;
  const bool forward = green && !stop && (!ego_present || ego_far_car);
  const bool turn_left = s.arrow == ArrowDir::kLeft && green && !stop;
  const bool turn_right = s.arrow == ArrowDir::kRight && green && !stop;

  Labels out;
  out.actions = {static_cast<std::uint8_t>(forward), static_cast<std::uint8_t>(stop),
                 static_cast<std::uint8_t>(turn_left),
                 static_cast<std::uint8_t>(turn_right)};
  out.reasons.assign(kNumReasons, 0);
  auto set = [&out](int idx, bool v) {
    out.reasons[static_cast<std::size_t>(idx)] = v ? 1 : 0;
  };
  set(0, forward && ego_far_car);                               // follow_traffic
  set(1, forward && !ego_present);                              // road_clear
  set(2, forward && green);                                     // traffic_light_green
  set(3, ego_near && s.ego.kind == ObstacleKind::kCar);         // obstacle_car
  set(4, ego_near && s.ego.kind == ObstacleKind::kPedestrian);  // obstacle_person
  set(5, ego_near && s.ego.kind == ObstacleKind::kRider);       // obstacle_rider
  set(6, ego_near && s.ego.kind == ObstacleKind::kOther);       // obstacle_others
  set(7, red);                                                  // traffic_light
  set(8, s.stop_sign);                                          // traffic_sign
  set(9, ind_left);                                             // front_car_turning_left
  set(10, s.arrow == ArrowDir::kLeft);                          // on_left_turn_lane
  set(11, turn_left);                                           // left_turn_light_allows
  set(12, ind_right);                                  // front_car_turning_right
  set(13, s.arrow == ArrowDir::kRight);                // on_right_turn_lane
  set(14, turn_right);                                 // right_turn_light_allows
  set(15, s.left.kind != ObstacleKind::kNone);         // obstacles_left_lane
  set(16, s.left_mark == LaneMark::kEdge);             // no_lane_left
  set(17, s.left_mark == LaneMark::kSolid);            // solid_line_left
  set(18, s.right.kind != ObstacleKind::kNone);        // obstacles_right_lane
  set(19, s.right_mark == LaneMark::kEdge);            // no_lane_right
  set(20, s.right_mark == LaneMark::kSolid);           // solid_line_right
  return out;
}

// ---------------------------------------------------------------------------
// rasterization
// ---------------------------------------------------------------------------

namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

struct Canvas {
  ImageU8& img;

  void px(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    img.at(y, x, 0) = c.r;
    img.at(y, x, 1) = c.g;
    img.at(y, x, 2) = c.b;
  }
  void rect(int x0, int y0, int x1, int y1, Rgb c) {
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, img.width);
    y1 = std::min(y1, img.height);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) px(x, y, c);
  }
  void circle(int cx, int cy, int r, Rgb c) {
    for (int y = cy - r; y <= cy + r; ++y)
      for (int x = cx - r; x <= cx + r; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) px(x, y, c);
  }
  // filled triangle via edge functions (vertices in pixel coordinates)
  void tri(int x0, int y0, int x1, int y1, int x2, int y2, Rgb c) {
    const int minx = std::min({x0, x1, x2}), maxx = std::max({x0, x1, x2});
    const int miny = std::min({y0, y1, y2}), maxy = std::max({y0, y1, y2});
    auto edge = [](int ax, int ay, int bx, int by, int px_, int py_) {
      return std::int64_t(bx - ax) * (py_ - ay) - std::int64_t(by - ay) * (px_ - ax);
    };
    const std::int64_t area = edge(x0, y0, x1, y1, x2, y2);
    if (area == 0) return;
    for (int y = miny; y <= maxy; ++y)
      for (int x = minx; x <= maxx; ++x) {
        const std::int64_t w0 = edge(x1, y1, x2, y2, x, y);
        const std::int64_t w1 = edge(x2, y2, x0, y0, x, y);
        const std::int64_t w2 = edge(x0, y0, x1, y1, x, y);
        const bool all_pos = w0 >= 0 && w1 >= 0 && w2 >= 0;
        const bool all_neg = w0 <= 0 && w1 <= 0 && w2 <= 0;
        if (all_pos || all_neg) px(x, y, c);
      }
  }
};

int li(double v) { return static_cast<int>(std::lround(v)); }

void draw_glyph(Canvas& cv, ObstacleKind kind, int cx, int cy, int h, Indicator ind) {
  if (kind == ObstacleKind::kNone || h <= 1) return;
  switch (kind) {
    case ObstacleKind::kCar: {
      const int w = li(1.5 * h);
      cv.rect(cx - li(0.30 * w), cy - li(0.50 * h), cx + li(0.30 * w), cy - li(0.15 * h),
              {24, 64, 160});  // cabin
      cv.rect(cx - li(0.22 * w), cy - li(0.44 * h), cx + li(0.22 * w), cy - li(0.20 * h),
              {150, 190, 240});  // windshield
      cv.rect(cx - w / 2, cy - li(0.15 * h), cx + w / 2, cy + li(0.50 * h),
              {36, 98, 222});  // body
      cv.rect(cx - li(0.42 * w), cy + li(0.38 * h), cx - li(0.25 * w), cy + li(0.56 * h),
              {16, 16, 16});
      cv.rect(cx + li(0.25 * w), cy + li(0.38 * h), cx + li(0.42 * w), cy + li(0.56 * h),
              {16, 16, 16});
      if (ind == Indicator::kLeft)
        cv.rect(cx - li(0.56 * w), cy, cx - li(0.44 * w), cy + li(0.22 * h),
                {255, 186, 20});
      if (ind == Indicator::kRight)
        cv.rect(cx + li(0.44 * w), cy, cx + li(0.56 * w), cy + li(0.22 * h),
                {255, 186, 20});
      break;
    }
    case ObstacleKind::kPedestrian:
      cv.rect(cx - li(0.14 * h), cy - li(0.20 * h), cx + li(0.14 * h), cy + li(0.50 * h),
              {214, 64, 190});
      cv.circle(cx, cy - li(0.34 * h), li(0.15 * h), {214, 64, 190});
      break;
    case ObstacleKind::kRider:
      cv.rect(cx - li(0.45 * h), cy + li(0.34 * h), cx + li(0.45 * h), cy + li(0.50 * h),
              {20, 140, 150});
      cv.rect(cx - li(0.12 * h), cy - li(0.25 * h), cx + li(0.12 * h), cy + li(0.34 * h),
              {32, 200, 210});
      cv.circle(cx, cy - li(0.38 * h), li(0.13 * h), {32, 200, 210});
      break;
    case ObstacleKind::kOther: {
      const int hw = li(0.45 * h), hh = li(0.50 * h);
      cv.tri(cx, cy - hh, cx - hw, cy + li(0.05 * h), cx + hw, cy + li(0.05 * h),
             {238, 148, 36});
      cv.tri(cx - hw, cy + li(0.05 * h), cx + hw, cy + li(0.05 * h), cx, cy + hh,
             {238, 148, 36});
      break;
    }
    case ObstacleKind::kNone:
      break;
  }
}

}  // namespace

ImageU8 render_scene(const SceneSpec& s, int height, int width) {
  require(height >= 32 && width >= 32, "scene canvas too small");
  ImageU8 img;
  img.width = width;
  img.height = height;
  img.channels = 3;
  img.data.assign(static_cast<std::size_t>(width) * height * 3, 0);
  Canvas cv{img};

  const double H = height, W = width;
  cv.rect(0, 0, width, height, {44, 44, 52});  // asphalt everywhere

  // lane boundaries, perspective-slanted
  auto boundary = [&](LaneMark mark, bool left_side) {
    if (mark == LaneMark::kNone) return;
    const double x_top = left_side ? 0.38 * W : 0.62 * W;
    const double x_bot = left_side ? 0.20 * W : 0.80 * W;
    const int y0 = li(0.30 * H);
    const Rgb color = mark == LaneMark::kEdge ? Rgb{212, 160, 52} : Rgb{232, 232, 232};
    for (int y = y0; y < height; ++y) {
      if (mark == LaneMark::kDashed && ((y * 16) / height) % 2 == 1) continue;
      const double t = double(y - y0) / double(height - y0);
      const double x = x_top + (x_bot - x_top) * t;
      const int half = (mark == LaneMark::kEdge ? 2 : 1) + li(1.5 * t);
      cv.rect(li(x) - half, y, li(x) + half + 1, y + 1, color);
    }
  };
  boundary(s.left_mark, true);
  boundary(s.right_mark, false);

  // painted lane arrow
  if (s.arrow != ArrowDir::kNone) {
    const int cx = li(0.50 * W), cy = li(0.86 * H);
    cv.rect(cx - li(0.012 * W), li(0.80 * H), cx + li(0.012 * W), li(0.92 * H),
            {210, 210, 214});
    if (s.arrow == ArrowDir::kLeft)
      cv.tri(cx - li(0.055 * W), cy, cx - li(0.012 * W), cy - li(0.05 * H),
             cx - li(0.012 * W), cy + li(0.05 * H), {210, 210, 214});
    else
      cv.tri(cx + li(0.055 * W), cy, cx + li(0.012 * W), cy - li(0.05 * H),
             cx + li(0.012 * W), cy + li(0.05 * H), {210, 210, 214});
  }

  // traffic light
  if (s.light != LightState::kNone) {
    cv.rect(li(0.46 * W), li(0.03 * H), li(0.54 * W), li(0.17 * H), {30, 30, 34});
    const Rgb lamp = s.light == LightState::kRed ? Rgb{230, 46, 46} : Rgb{52, 214, 96};
    cv.circle(li(0.50 * W), li(0.10 * H), li(0.045 * H), lamp);
  }

  // stop sign
  if (s.stop_sign) {
    cv.circle(li(0.85 * W), li(0.10 * H), li(0.05 * H), {196, 24, 36});
    cv.rect(li(0.81 * W), li(0.092 * H), li(0.89 * W), li(0.112 * H), {240, 240, 240});
  }

  // side-lane obstacles
  auto side = [&](const LaneObstacle& o, bool left_side) {
    if (o.kind == ObstacleKind::kNone) return;
    const double base = left_side ? 0.14 * W : 0.86 * W;
    const int cx = li(base + (o.lateral - 0.5) * 0.06 * W);
    const int cy = li(0.52 * H + (o.depth - 0.5) * 0.12 * H);
    draw_glyph(cv, o.kind, cx, cy, li(0.15 * H), Indicator::kNone);
  };
  side(s.left, true);
  side(s.right, false);

  // ego-lane obstacle, front-most
  if (s.ego.kind != ObstacleKind::kNone) {
    if (s.ego.near) {
      const int cx = li(0.50 * W + (s.ego.lateral - 0.5) * 0.08 * W);
      draw_glyph(cv, s.ego.kind, cx, li(0.72 * H), li(0.26 * H), s.indicator);
    } else {
      const int cx = li(0.50 * W + (s.ego.lateral - 0.5) * 0.12 * W);
      draw_glyph(cv, s.ego.kind, cx, li(0.46 * H), li(0.11 * H), s.indicator);
    }
  }
  return img;
}

SynthSummary generate_dataset(int n, std::uint64_t seed, const std::string& out_dir,
                              const SynthOptions& opts) {
  require(n > 0, "cannot generate an empty dataset (n must be positive)");
  require(opts.train_frac >= 0 && opts.val_frac >= 0 &&
              opts.train_frac + opts.val_frac <= 1.0,
          "split fractions must be non-negative and sum to at most 1");
  require(opts.label_noise >= 0 && opts.label_noise < 1, "label noise must be in [0,1)");
  fs::create_directories(fs::path(out_dir) / "images");

  int n_train = static_cast<int>(std::lround(n * opts.train_frac));
  int n_val = static_cast<int>(std::lround(n * opts.val_frac));
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);

  DatasetManifest train = make_manifest("train");
  DatasetManifest val = make_manifest("val");
  DatasetManifest test = make_manifest("test");
  SynthSummary sum;
  sum.total = n;

  for (int i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    SceneSpec spec = sample_scene(rng);
    spec.seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    Labels labels = oracle_labels(spec);
    if (opts.label_noise > 0) {
      for (auto& b : labels.actions)
        if (unit(rng) < opts.label_noise) b ^= 1;
      for (auto& b : labels.reasons)
        if (unit(rng) < opts.label_noise) b ^= 1;
    }

    char name[32];
    std::snprintf(name, sizeof name, "scene_%06d", i);
    const std::string file = std::string("images/") + name + ".png";
    write_png((fs::path(out_dir) / file).string(),
              render_scene(spec, opts.height, opts.width));

    AnnotationRecord rec{name, file, labels.actions, labels.reasons};
    for (std::size_t k = 0; k < rec.actions.size(); ++k)
      sum.counts.actions[k] += rec.actions[k];
    for (std::size_t k = 0; k < rec.reasons.size(); ++k)
      sum.counts.reasons[k] += rec.reasons[k];
    ++sum.counts.samples;

    if (i < n_train)
      train.records.push_back(std::move(rec));
    else if (i < n_train + n_val)
      val.records.push_back(std::move(rec));
    else
      test.records.push_back(std::move(rec));
  }
  sum.train = static_cast<int>(train.records.size());
  sum.val = static_cast<int>(val.records.size());
  sum.test = static_cast<int>(test.records.size());

  write_manifest(train, (fs::path(out_dir) / "train.jsonl").string());
  write_manifest(val, (fs::path(out_dir) / "val.jsonl").string());
  write_manifest(test, (fs::path(out_dir) / "test.jsonl").string());
  return sum;
}

}  // namespace arnet
