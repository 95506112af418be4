#include "arnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

namespace arnet {

using nlohmann::json;

void validate_config(const TrainConfig& cfg) {
  require(cfg.lambda >= 0, "lambda must be non-negative");
  if (std::isinf(cfg.lambda) && cfg.model.reason_input == ReasonInputMode::kPredicted)
    throw DataError(
        "lambda=inf requires the oracle or detached reason input: with the "
        "predicted input the action head would be trained only through its own "
        "unsupervised predictions");
  require(cfg.batch_size >= 1, "batch size must be positive");
  require(cfg.epochs >= 1, "epoch count must be positive");
  require(cfg.lr > 0, "learning rate must be positive");
  require(cfg.momentum >= 0 && cfg.momentum < 1, "momentum must be in [0,1)");
  require(cfg.weight_decay >= 0, "weight decay must be non-negative");
  for (double w : cfg.action_weights)
    require(w >= 0, "action class weights must be non-negative");
  require(cfg.model.threshold > 0 && cfg.model.threshold < 1,
          "decision threshold must be inside (0,1)");
}

// ---------------------------------------------------------------------------
// config serialization
// ---------------------------------------------------------------------------

namespace {

json model_to_json(const ModelConfig& m) {
  return json{{"profile", m.profile},
              {"attention_blocks", m.attention_blocks},
              {"reduction", m.reduction},
              {"attention_eps", double(m.attention_eps)},
              {"trunk_channels", m.trunk_channels},
              {"hidden", m.hidden},
              {"threshold", m.threshold},
              {"reason_input", to_string(m.reason_input)},
              {"seed", m.seed},
              {"input_h", m.input_h},
              {"input_w", m.input_w},
              {"norm_mean", m.norm_mean},
              {"norm_std", m.norm_std}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.profile = j.value("profile", "desk");
  m.apply_profile();
  m.attention_blocks = j.value("attention_blocks", m.attention_blocks);
  m.reduction = j.value("reduction", m.reduction);
  m.attention_eps = static_cast<Real>(j.value("attention_eps", 1e-6));
  m.trunk_channels = j.value("trunk_channels", m.trunk_channels);
  m.hidden = j.value("hidden", m.hidden);
  m.threshold = j.value("threshold", 0.5);
  m.reason_input = reason_input_from_string(j.value("reason_input", "predicted"));
  m.seed = j.value("seed", std::uint64_t(1));
  m.input_h = j.value("input_h", m.input_h);
  m.input_w = j.value("input_w", m.input_w);
  if (j.contains("norm_mean")) m.norm_mean = j["norm_mean"].get<std::array<double, 3>>();
  if (j.contains("norm_std")) m.norm_std = j["norm_std"].get<std::array<double, 3>>();
  return m;
}

}  // namespace

std::string config_to_json(const TrainConfig& cfg) {
  json j;
  j["model"] = model_to_json(cfg.model);
  if (std::isinf(cfg.lambda))
    j["lambda"] = "inf";
  else
    j["lambda"] = cfg.lambda;
  j["action_weights"] = cfg.action_weights;
  j["lr"] = cfg.lr;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  auto& sched = j["lr_schedule"] = json::array();
  for (const auto& s : cfg.lr_schedule)
    sched.push_back({{"epoch", s.epoch}, {"factor", s.factor}});
  j["seed"] = cfg.seed;
  return j.dump(2);
}

TrainConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("cannot parse config: ") + e.what());
  }
  TrainConfig cfg;
  try {
    if (j.contains("model")) cfg.model = model_from_json(j["model"]);
    if (j.contains("lambda")) {
      if (j["lambda"].is_string()) {
        const std::string s = j["lambda"].get<std::string>();
        require(s == "inf", "unknown lambda value: " + s);
        cfg.lambda = std::numeric_limits<double>::infinity();
      } else {
        cfg.lambda = j["lambda"].get<double>();
      }
    }
    if (j.contains("action_weights"))
      cfg.action_weights = j["action_weights"].get<std::array<double, 4>>();
    cfg.lr = j.value("lr", cfg.lr);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    if (j.contains("lr_schedule")) {
      cfg.lr_schedule.clear();
      for (const auto& s : j["lr_schedule"])
        cfg.lr_schedule.push_back({s.value("epoch", 30), s.value("factor", 0.1)});
    }
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad config value: ") + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

Var multitask_loss(const ForwardTrace& trace, const Tensor& action_gt,
                   const Tensor& reason_gt, const TrainConfig& cfg, LossParts* parts) {
  require(cfg.lambda >= 0, "lambda must be non-negative");
  const bool reason_only = std::isinf(cfg.lambda);

  Var action_term, reason_term;
  if (!reason_only) {
    std::vector<Real> w(cfg.action_weights.size());
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] = static_cast<Real>(cfg.action_weights[i]);
    action_term = bce_with_logits(trace.action_logits, action_gt, w);
  }
  if (cfg.lambda > 0) {
    reason_term = bce_with_logits(trace.reason_logits, reason_gt,
                                  std::vector<Real>(kNumReasons, Real(1)));
  }

  Var total;
  if (reason_only)
    total = reason_term;
  else if (cfg.lambda == 0)
    total = action_term;  // reason head stays out of the graph entirely
  else
    total = add(action_term, scale(reason_term, static_cast<Real>(cfg.lambda)));

  if (parts) {
    parts->action = action_term.defined() ? double(action_term.value()[0]) : 0.0;
    parts->reason = reason_term.defined() ? double(reason_term.value()[0]) : 0.0;
    parts->total = double(total.value()[0]);
  }
  return total;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

void Sgd::step(ParamSet& ps) {
  if (velocity.size() != ps.params.size()) velocity.resize(ps.params.size());
  for (std::size_t i = 0; i < ps.params.size(); ++i) {
    Param& p = ps.params[i];
    if (!p.var.has_grad()) continue;  // untouched by this loss
    Tensor& w = p.var.value_mut();
    const Tensor& g = p.var.grad();
    Tensor& v = velocity[i];
    if (v.empty()) v = Tensor(w.shape());
    const Real mu = static_cast<Real>(momentum);
    const Real wd = p.decay ? static_cast<Real>(weight_decay) : Real(0);
    const Real step_lr = static_cast<Real>(lr);
    for (std::int64_t k = 0; k < w.numel(); ++k) {
      const Real grad_k = g[k] + wd * w[k];
      v[k] = mu * v[k] + grad_k;
      w[k] -= step_lr * v[k];
    }
  }
}

// ---------------------------------------------------------------------------
// data loading
// ---------------------------------------------------------------------------

ImageU8 resize_image(const ImageU8& img, int height, int width) {
  if (img.height == height && img.width == width) return img;
  ImageU8 out;
  out.width = width;
  out.height = height;
  out.channels = img.channels;
  out.data.resize(static_cast<std::size_t>(width) * height * img.channels);
  const double sy = double(img.height) / height, sx = double(img.width) / width;
  for (int y = 0; y < height; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    if (fy < 0) fy = 0;
    int y0 = static_cast<int>(fy);
    y0 = std::min(y0, img.height - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      if (fx < 0) fx = 0;
      int x0 = static_cast<int>(fx);
      x0 = std::min(x0, img.width - 1);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double top = img.at(y0, x0, c) + (img.at(y0, x1, c) - img.at(y0, x0, c)) * wx;
        const double bot = img.at(y1, x0, c) + (img.at(y1, x1, c) - img.at(y1, x0, c)) * wx;
        out.at(y, x, c) =
            static_cast<std::uint8_t>(std::lround(std::clamp(top + (bot - top) * wy, 0.0, 255.0)));
      }
    }
  }
  return out;
}

ImageU8 to_rgb(const ImageU8& img) {
  if (img.channels == 3) return img;
  ImageU8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = 3;
  out.data.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      std::uint8_t r, g, b;
      if (img.channels == 1) {
        r = g = b = img.at(y, x, 0);
      } else if (img.channels == 2) {
        r = g = b = img.at(y, x, 0);
      } else {  // RGBA
        r = img.at(y, x, 0);
        g = img.at(y, x, 1);
        b = img.at(y, x, 2);
      }
      out.at(y, x, 0) = r;
      out.at(y, x, 1) = g;
      out.at(y, x, 2) = b;
    }
  return out;
}

LoadedDataset LoadedDataset::load(const DatasetManifest& m, int height, int width) {
  LoadedDataset ds;
  ds.split = m.split;
  const int n = static_cast<int>(m.records.size());
  require(n > 0, "dataset split '" + m.split + "' has no records");
  ds.actions = BitMatrix(n, kNumActions);
  ds.reasons = BitMatrix(n, kNumReasons);
  ds.images.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& rec = m.records[static_cast<std::size_t>(i)];
    ds.ids.push_back(rec.id);
    ds.images.push_back(
        resize_image(to_rgb(read_png(resolve_image_path(m, rec))), height, width));
    for (int k = 0; k < kNumActions; ++k) ds.actions.at(i, k) = rec.actions[static_cast<std::size_t>(k)];
    for (int k = 0; k < kNumReasons; ++k) ds.reasons.at(i, k) = rec.reasons[static_cast<std::size_t>(k)];
  }
  return ds;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[9] = "ARNETCK1";

void put_u64(std::ofstream& f, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  f.write(reinterpret_cast<const char*>(b), 8);
}
std::uint64_t get_u64(std::ifstream& f) {
  unsigned char b[8];
  f.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}
void put_f64(std::ofstream& f, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(f, bits);
}
double get_f64(std::ifstream& f) {
  const std::uint64_t bits = get_u64(f);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}
void put_str(std::ofstream& f, const std::string& s) {
  put_u64(f, s.size());
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string get_str(std::ifstream& f, const char* what) {
  const std::uint64_t n = get_u64(f);
  require(n < (1ull << 31), std::string("corrupt checkpoint (") + what + ")");
  std::string s(n, '\0');
  f.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  put_u64(f, 1);  // container version
  put_str(f, ck.config_json);
  put_u64(f, static_cast<std::uint64_t>(ck.epoch));
  put_f64(f, ck.best_metric);
  put_str(f, ck.rng_state);
  put_u64(f, ck.weights.size());
  for (const auto& [name, t] : ck.weights) {
    put_str(f, name);
    put_u64(f, static_cast<std::uint64_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u64(f, static_cast<std::uint64_t>(t.dim(i)));
    for (std::int64_t i = 0; i < t.numel(); ++i) put_f64(f, double(t[i]));
  }
  require(f.good(), "cannot write checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  require(f.good() && std::memcmp(magic, kMagic, 8) == 0,
          "not a checkpoint file: " + path);
  require(get_u64(f) == 1, "unsupported checkpoint version in " + path);
  Checkpoint ck;
  ck.config_json = get_str(f, "config");
  ck.epoch = static_cast<int>(get_u64(f));
  ck.best_metric = get_f64(f);
  ck.rng_state = get_str(f, "rng state");
  const std::uint64_t n = get_u64(f);
  require(n < (1ull << 20), "corrupt checkpoint (weight count): " + path);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string name = get_str(f, "weight name");
    const std::uint64_t rank = get_u64(f);
    require(rank <= 8, "corrupt checkpoint (weight rank): " + path);
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d)
      shape.push_back(static_cast<int>(get_u64(f)));
    Tensor t(shape);
    for (std::int64_t k = 0; k < t.numel(); ++k) t[k] = static_cast<Real>(get_f64(f));
    require(f.good(), "corrupt checkpoint (truncated): " + path);
    ck.weights.emplace_back(name, std::move(t));
  }
  return ck;
}

Checkpoint snapshot(const ArNet& model, const TrainConfig& cfg, int epoch,
                    double best_metric) {
  Checkpoint ck;
  ck.config_json = config_to_json(cfg);
  ck.epoch = epoch;
  ck.best_metric = best_metric;
  ck.rng_state = "seed:" + std::to_string(cfg.seed) + ";epoch:" + std::to_string(epoch);
  for (const auto& p : model.parameters().params)
    ck.weights.emplace_back(p.name, p.var.value());
  return ck;
}

ArNet model_from_checkpoint(const Checkpoint& ck) {
  const TrainConfig cfg = config_from_json(ck.config_json);
  ArNet model = ArNet::make(cfg.model);
  ParamSet ps = model.parameters();
  require(ps.params.size() == ck.weights.size(),
          "checkpoint weight mismatch: model has " + std::to_string(ps.params.size()) +
              " tensors, checkpoint has " + std::to_string(ck.weights.size()));
  for (const auto& [name, t] : ck.weights) {
    const Param* p = ps.find(name);
    require(p != nullptr, "checkpoint weight mismatch: unknown tensor " + name);
    require(p->var.value().shape() == t.shape(),
            "checkpoint weight mismatch: " + name + " has shape " +
                shape_str(t.shape()) + ", model expects " +
                shape_str(p->var.value().shape()));
    const_cast<Param*>(p)->var.value_mut() = t;
  }
  return model;
}

std::string checkpoint_fingerprint(const Checkpoint& ck) {
  std::uint64_t h = fnv1a("arnet-checkpoint");
  for (const auto& [name, t] : ck.weights) {
    h = fnv1a(name, h);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const double v = double(t[i]);
      h = fnv1a_bytes(&v, sizeof v, h);
    }
  }
  return to_hex(h);
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

Tensor bits_to_tensor(const BitMatrix& m, const std::vector<int>& idx) {
  Tensor t({static_cast<int>(idx.size()), m.cols});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (int c = 0; c < m.cols; ++c)
      t.at2(static_cast<int>(i), c) = static_cast<Real>(m.at(idx[i], c));
  return t;
}

Tensor batch_input(const ArNet& model, const LoadedDataset& ds,
                   const std::vector<int>& idx) {
  std::vector<const std::uint8_t*> ptrs;
  ptrs.reserve(idx.size());
  for (int i : idx) ptrs.push_back(ds.images[static_cast<std::size_t>(i)].data.data());
  return model.normalize(ptrs, model.cfg.input_h, model.cfg.input_w);
}

double lr_at(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (const auto& s : cfg.lr_schedule)
    if (epoch >= s.epoch) lr *= s.factor;
  return lr;
}

}  // namespace

ModelOutput predict(const ArNet& model, const LoadedDataset& ds, int batch_size,
                    const BitMatrix* gt_actions) {
  require(batch_size >= 1, "batch size must be positive");
  ModelOutput all;
  const int n = ds.size();
  for (int at = 0; at < n; at += batch_size) {
    std::vector<int> idx;
    for (int i = at; i < std::min(at + batch_size, n); ++i) idx.push_back(i);
    const Var x = Var::leaf(batch_input(model, ds, idx), false);
    Tensor oracle;
    const Tensor* oracle_ptr = nullptr;
    if (model.cfg.reason_input == ReasonInputMode::kOracle) {
      require(gt_actions != nullptr,
              "oracle reason input requires ground-truth actions");
      oracle = bits_to_tensor(*gt_actions, idx);
      oracle_ptr = &oracle;
    }
    const ForwardTrace trace = model.forward(x, oracle_ptr);
    ModelOutput out = model.read_output(trace);
    for (std::size_t i = 0; i < out.actions.size(); ++i) {
      all.actions.push_back(std::move(out.actions[i]));
      all.reasons.push_back(std::move(out.reasons[i]));
      all.action_probs.push_back(std::move(out.action_probs[i]));
      all.reason_probs.push_back(std::move(out.reason_probs[i]));
    }
  }
  return all;
}

MetricsReport evaluate_model(const ArNet& model, const LoadedDataset& ds,
                             const PairMatrix& pm, bool turn_exclusion,
                             const F1Options& opt, int batch_size) {
  const ModelOutput out = predict(model, ds, batch_size, &ds.actions);
  const int n = ds.size();
  BitMatrix ap(n, kNumActions), rp(n, kNumReasons);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < kNumActions; ++k)
      ap.at(i, k) = out.actions[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    for (int k = 0; k < kNumReasons; ++k)
      rp.at(i, k) = out.reasons[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  }
  MetricsReport rep =
      build_report(ap, rp, ds.actions, ds.reasons, pm, turn_exclusion, opt);
  rep.split = ds.split;
  return rep;
}

TrainResult train_model(const TrainConfig& cfg, const LoadedDataset& train_set,
                        const LoadedDataset& val_set, const EpochCallback& on_epoch) {
  validate_config(cfg);
  ArNet model = ArNet::make(cfg.model);
  ParamSet params = model.parameters();
  Sgd sgd(cfg.lr, cfg.momentum, cfg.weight_decay);
  const PairMatrix pm = PairMatrix::defaults();

  TrainResult result;
  Rng shuffle_rng(mix_seed(cfg.seed, 0x5u));
  double best = -1;

  std::vector<int> order(static_cast<std::size_t>(train_set.size()));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    sgd.lr = lr_at(cfg, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0, action_sum = 0, reason_sum = 0;
    std::int64_t seen = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(at),
                           order.begin() +
                               static_cast<std::ptrdiff_t>(
                                   std::min(at + static_cast<std::size_t>(cfg.batch_size),
                                            order.size())));
      const Var x = Var::leaf(batch_input(model, train_set, idx), false);
      const Tensor action_gt = bits_to_tensor(train_set.actions, idx);
      const Tensor reason_gt = bits_to_tensor(train_set.reasons, idx);
      const ForwardTrace trace = model.forward(
          x, cfg.model.reason_input == ReasonInputMode::kOracle ? &action_gt : nullptr);
      LossParts parts;
      const Var loss = multitask_loss(trace, action_gt, reason_gt, cfg, &parts);
      params.zero_grad();
      backward(loss);
      sgd.step(params);
      const auto bs = static_cast<std::int64_t>(idx.size());
      loss_sum += parts.total * double(bs);
      action_sum += parts.action * double(bs);
      reason_sum += parts.reason * double(bs);
      seen += bs;
    }

    const MetricsReport val = evaluate_model(model, val_set, pm, true, {}, cfg.batch_size);
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = sgd.lr;
    stats.loss = loss_sum / double(seen);
    stats.action_loss = action_sum / double(seen);
    stats.reason_loss = reason_sum / double(seen);
    stats.val_action_overall = val.action_overall;
    stats.val_reason_overall = val.reason_overall;
    stats.val_joint_overall = val.joint_overall;
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);

    if (val.reason_overall > best) {
      best = val.reason_overall;
      result.best = snapshot(model, cfg, epoch, best);
    }
  }
  result.last = snapshot(model, cfg, cfg.epochs, best);
  return result;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

std::vector<SweepRow> run_sweep(const TrainConfig& base, const SweepGrid& grid,
                                const LoadedDataset& train_set,
                                const LoadedDataset& val_set,
                                const std::function<void(const SweepRow&)>& on_row) {
  std::vector<SweepRow> rows;
  auto finish = [&](SweepRow row, const TrainConfig& cfg) {
    if (!row.skipped) {
      const TrainResult r = train_model(cfg, train_set, val_set);
      const ArNet model = model_from_checkpoint(r.best);
      const MetricsReport rep =
          evaluate_model(model, val_set, PairMatrix::defaults(), true, {}, cfg.batch_size);
      row.action_overall = rep.action_overall;
      row.reason_overall = rep.reason_overall;
      row.joint_overall = rep.joint_overall;
      AttentionConfig ac;
      ac.channels = cfg.model.maspp.projection_out;
      ac.reduction = cfg.model.reduction;
      row.attention_params = attention_params(ac, cfg.model.attention_blocks);
      row.total_params = model.parameter_count();
    }
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  };

  for (const std::string& mode : grid.modes)
    for (double lambda : grid.lambdas) {
      SweepRow row;
      row.kind = "lambda";
      row.lambda = lambda;
      row.mode = mode;
      row.reduction = base.model.reduction;
      TrainConfig cfg = base;
      cfg.lambda = lambda;
      try {
        cfg.model.reason_input = reason_input_from_string(mode);
        validate_config(cfg);
      } catch (const std::exception& e) {
        row.skipped = true;
        row.reason = e.what();
      }
      finish(std::move(row), cfg);
    }

  for (int r : grid.reductions) {
    SweepRow row;
    row.kind = "reduction";
    row.lambda = base.lambda;
    row.mode = to_string(base.model.reason_input);
    row.reduction = r;
    TrainConfig cfg = base;
    cfg.model.reduction = r;
    try {
      require(r > 0 && cfg.model.maspp.projection_out % r == 0,
              "attention reduction must divide the channel count (" +
                  std::to_string(cfg.model.maspp.projection_out) + " % " +
                  std::to_string(r) + " != 0)");
      validate_config(cfg);
    } catch (const std::exception& e) {
      row.skipped = true;
      row.reason = e.what();
    }
    finish(std::move(row), cfg);
  }
  return rows;
}

}  // namespace arnet
