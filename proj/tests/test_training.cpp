#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <random>

#include "arnet/synth.hpp"
#include "arnet/training.hpp"

using namespace arnet;
namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.backbone = {3, 4, 6, 8};
  cfg.maspp.in_t2 = 4;
  cfg.maspp.in_t3 = 6;
  cfg.maspp.in_t4 = 8;
  cfg.maspp.branch_channels = 4;
  cfg.maspp.projection_out = 8;
  cfg.reduction = 2;
  cfg.trunk_channels = 6;
  cfg.hidden = 8;
  cfg.input_h = 32;
  cfg.input_w = 64;
  cfg.seed = 9;
  return cfg;
}

ForwardTrace logits_trace(const Tensor& action_logits, const Tensor& reason_logits) {
  ForwardTrace t;
  t.action_logits = Var::leaf(action_logits, true);
  t.reason_logits = Var::leaf(reason_logits, true);
  return t;
}

double bce_oracle(const Tensor& logits, const Tensor& targets,
                  const std::vector<double>& w) {
  double total = 0;
  for (int r = 0; r < logits.dim(0); ++r)
    for (int c = 0; c < logits.dim(1); ++c) {
      const double x = logits.at2(r, c), y = targets.at2(r, c);
      total += w[std::size_t(c)] *
               (std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x))));
    }
  return total / logits.dim(0);
}

// one shared synthetic dataset for the slow training cases
struct TrainFixture {
  fs::path dir;
  LoadedDataset train, val;

  TrainFixture() : dir(fs::temp_directory_path() / "arnet_train_fixture") {
    fs::remove_all(dir);
    SynthOptions opts;
    opts.height = 64;
    opts.width = 96;
    generate_dataset(12, 41, dir.string(), opts);
    train = LoadedDataset::load(read_manifest((dir / "train.jsonl").string()), 32, 64);
    val = LoadedDataset::load(read_manifest((dir / "val.jsonl").string()), 32, 64);
  }
  ~TrainFixture() { fs::remove_all(dir); }
};

TrainFixture& fixture() {
  static TrainFixture f;
  return f;
}

// desk widths (the only ones a checkpoint can reconstruct) at a small input
TrainConfig desk_small() {
  TrainConfig cfg;
  cfg.model.input_h = 32;
  cfg.model.input_w = 64;
  return cfg;
}

const Tensor& weight_named(const ParamSet& ps, const std::string& name) {
  const Param* p = ps.find(name);
  REQUIRE(p != nullptr);
  return p->var.value();
}

const Tensor& ck_weight(const Checkpoint& ck, const std::string& name) {
  for (const auto& [n, t] : ck.weights)
    if (n == name) return t;
  REQUIRE_MESSAGE(false, "missing checkpoint tensor " << name);
  return ck.weights.front().second;
}

bool same_tensor(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("zero logits price each class at log two") {
  const ForwardTrace t = logits_trace(Tensor({1, 4}, Real(0)), Tensor({1, 21}, Real(0)));
  TrainConfig cfg;  // weights {1,1,2,2}, lambda 1
  LossParts parts;
  const Var loss = multitask_loss(t, Tensor({1, 4}), Tensor({1, 21}), cfg, &parts);
  const double ln2 = std::log(2.0);
  CHECK(parts.action == doctest::Approx(6 * ln2).epsilon(1e-6));
  CHECK(parts.reason == doctest::Approx(21 * ln2).epsilon(1e-6));
  CHECK(parts.total == doctest::Approx(27 * ln2).epsilon(1e-6));
  CHECK(double(loss.value()[0]) == doctest::Approx(parts.total));
}

TEST_CASE("loss parts match a closed-form oracle on random batches") {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> d(-3, 3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor al({3, 4}), rl({3, 21});
    Tensor ag({3, 4}), rg({3, 21});
    for (std::int64_t i = 0; i < al.numel(); ++i) al[i] = Real(d(rng));
    for (std::int64_t i = 0; i < rl.numel(); ++i) rl[i] = Real(d(rng));
    for (std::int64_t i = 0; i < ag.numel(); ++i) ag[i] = (rng() & 1) ? 1 : 0;
    for (std::int64_t i = 0; i < rg.numel(); ++i) rg[i] = (rng() & 1) ? 1 : 0;

    TrainConfig cfg;
    cfg.lambda = 0.5 + d(rng) * 0.1;
    LossParts parts;
    multitask_loss(logits_trace(al, rl), ag, rg, cfg, &parts);

    const double action = bce_oracle(al, ag, {1, 1, 2, 2});
    const double reason = bce_oracle(rl, rg, std::vector<double>(21, 1.0));
    CHECK(parts.action == doctest::Approx(action).epsilon(1e-5));
    CHECK(parts.reason == doctest::Approx(reason).epsilon(1e-5));
    CHECK(parts.total ==
          doctest::Approx(action + cfg.lambda * reason).epsilon(1e-5));
  }
}

TEST_CASE("lambda zero and infinity drop the other task from the graph") {
  Tensor al({2, 4}, Real(0.3)), rl({2, 21}, Real(-0.2));
  Tensor ag({2, 4}, Real(1)), rg({2, 21});

  TrainConfig cfg;
  cfg.lambda = 0;
  LossParts parts;
  ForwardTrace t = logits_trace(al, rl);
  Var loss = multitask_loss(t, ag, rg, cfg, &parts);
  CHECK(parts.reason == 0.0);
  CHECK(parts.total == parts.action);
  backward(loss);
  CHECK(t.action_logits.has_grad());
  CHECK(!t.reason_logits.has_grad());

  cfg.lambda = kInf;
  t = logits_trace(al, rl);
  loss = multitask_loss(t, ag, rg, cfg, &parts);
  CHECK(parts.action == 0.0);
  CHECK(parts.total == parts.reason);
  backward(loss);
  CHECK(!t.action_logits.has_grad());
  CHECK(t.reason_logits.has_grad());

  cfg.lambda = -1;
  CHECK_THROWS_AS(multitask_loss(logits_trace(al, rl), ag, rg, cfg), DataError);
}

TEST_CASE("config validation rejects contradictory settings") {
  TrainConfig ok;
  CHECK_NOTHROW(validate_config(ok));

  TrainConfig c = ok;
  c.lambda = kInf;
  CHECK_THROWS_WITH(validate_config(c), doctest::Contains("lambda=inf requires"));
  c.model.reason_input = ReasonInputMode::kOracle;
  CHECK_NOTHROW(validate_config(c));  // fine with the oracle input
  c.model.reason_input = ReasonInputMode::kDetached;
  CHECK_NOTHROW(validate_config(c));

  c = ok;
  c.lambda = -0.5;
  CHECK_THROWS_AS(validate_config(c), DataError);
  c = ok;
  c.batch_size = 0;
  CHECK_THROWS_AS(validate_config(c), DataError);
  c = ok;
  c.epochs = 0;
  CHECK_THROWS_AS(validate_config(c), DataError);
  c = ok;
  c.lr = 0;
  CHECK_THROWS_AS(validate_config(c), DataError);
  c = ok;
  c.momentum = 1.0;
  CHECK_THROWS_AS(validate_config(c), DataError);
  c = ok;
  c.weight_decay = -1e-4;
  CHECK_THROWS_AS(validate_config(c), DataError);
  c = ok;
  c.action_weights[2] = -1;
  CHECK_THROWS_AS(validate_config(c), DataError);
  c = ok;
  c.model.threshold = 1.0;
  CHECK_THROWS_AS(validate_config(c), DataError);
}

TEST_CASE("train configs round-trip through json, including infinity") {
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.model.reason_input = ReasonInputMode::kDetached;
  cfg.model.threshold = 0.4;
  cfg.lambda = kInf;
  cfg.action_weights = {1, 2, 3, 4};
  cfg.lr = 0.005;
  cfg.momentum = 0.8;
  cfg.weight_decay = 2e-4;
  cfg.epochs = 7;
  cfg.batch_size = 3;
  cfg.lr_schedule = {{4, 0.1}, {6, 0.5}};
  cfg.seed = 1234;

  const std::string text = config_to_json(cfg);
  CHECK(text.find("\"inf\"") != std::string::npos);
  const TrainConfig back = config_from_json(text);
  CHECK(std::isinf(back.lambda));
  CHECK(back.action_weights == cfg.action_weights);
  CHECK(back.lr == cfg.lr);
  CHECK(back.momentum == cfg.momentum);
  CHECK(back.weight_decay == cfg.weight_decay);
  CHECK(back.epochs == 7);
  CHECK(back.batch_size == 3);
  REQUIRE(back.lr_schedule.size() == 2);
  CHECK(back.lr_schedule[0].epoch == 4);
  CHECK(back.lr_schedule[1].factor == 0.5);
  CHECK(back.seed == 1234);
  CHECK(back.model.reason_input == ReasonInputMode::kDetached);
  CHECK(back.model.threshold == 0.4);
  CHECK(back.model.seed == cfg.model.seed);
  CHECK(back.model.input_w == 64);

  // defaults survive too (profile-driven widths come back identical)
  const TrainConfig dflt = config_from_json(config_to_json(TrainConfig{}));
  CHECK(dflt.model.backbone.c4 == 256);
  CHECK(dflt.lambda == 1.0);
  REQUIRE(dflt.lr_schedule.size() == 1);
  CHECK(dflt.lr_schedule[0].epoch == 30);

  CHECK_THROWS_AS(config_from_json("{\"lambda\": \"huge\"}"), DataError);
  CHECK_THROWS_AS(config_from_json("not json"), DataError);
}

TEST_CASE("sgd applies momentum and selective weight decay") {
  // two scalar parameters, one decayed, one exempt
  Var w1 = Var::leaf(Tensor::scalar(2), true);
  Var w2 = Var::leaf(Tensor::scalar(2), true);
  ParamSet ps;
  ps.add("w1", w1, true);
  ps.add("w2", w2, false);

  auto loss_of = [&] { return add(mul(w1, w1), mul(w2, w2)); };  // dL/dw = 2w
  Sgd sgd(0.1, 0.9, 0.5);

  ps.zero_grad();
  backward(loss_of());
  sgd.step(ps);
  // v1 = 2*2 + 0.5*2 = 5 -> w1 = 2 - 0.5; v2 = 4 -> w2 = 2 - 0.4
  CHECK(double(w1.value()[0]) == doctest::Approx(1.5));
  CHECK(double(w2.value()[0]) == doctest::Approx(1.6));

  ps.zero_grad();
  backward(loss_of());
  sgd.step(ps);
  // v1 = 0.9*5 + (3 + 0.75) = 8.25 -> w1 = 1.5 - 0.825
  CHECK(double(w1.value()[0]) == doctest::Approx(0.675));
  // v2 = 0.9*4 + 3.2 = 6.8 -> w2 = 1.6 - 0.68
  CHECK(double(w2.value()[0]) == doctest::Approx(0.92));

  // a parameter with no gradient this step is not touched at all
  ps.zero_grad();
  backward(mul(w1, w1));
  const double before = double(w2.value()[0]);
  sgd.step(ps);
  CHECK(double(w2.value()[0]) == before);
  CHECK(double(w1.value()[0]) != doctest::Approx(0.675));
}

TEST_CASE("loaded datasets carry ids, labels and resized images") {
  const LoadedDataset& train = fixture().train;
  CHECK(train.size() == 8);
  CHECK(train.split == "train");
  CHECK(train.ids[0] == "scene_000000");
  CHECK(train.actions.rows == 8);
  CHECK(train.actions.cols == kNumActions);
  CHECK(train.reasons.cols == kNumReasons);
  for (const auto& img : train.images) {
    CHECK(img.height == 32);
    CHECK(img.width == 64);
    CHECK(img.channels == 3);
  }
}

TEST_CASE("training is deterministic in the seed") {
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.lr = 0.01;

  const TrainResult a = train_model(cfg, fixture().train, fixture().val);
  const TrainResult b = train_model(cfg, fixture().train, fixture().val);
  CHECK(checkpoint_fingerprint(a.last) == checkpoint_fingerprint(b.last));
  REQUIRE(a.history.size() == 2);
  REQUIRE(b.history.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.history[i].loss == b.history[i].loss);
    CHECK(a.history[i].val_reason_overall == b.history[i].val_reason_overall);
  }

  TrainConfig other = cfg;
  other.seed = cfg.seed + 1;
  const TrainResult c = train_model(other, fixture().train, fixture().val);
  CHECK(checkpoint_fingerprint(c.last) != checkpoint_fingerprint(a.last));
}

TEST_CASE("the learning-rate schedule multiplies in as epochs pass") {
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.lr = 0.01;
  cfg.lr_schedule = {{2, 0.1}, {3, 0.5}};

  std::vector<double> lrs;
  const TrainResult r = train_model(cfg, fixture().train, fixture().val,
                                    [&](const EpochStats& s) { lrs.push_back(s.lr); });
  REQUIRE(lrs.size() == 3);
  CHECK(lrs[0] == doctest::Approx(0.01));
  CHECK(lrs[1] == doctest::Approx(0.001));
  CHECK(lrs[2] == doctest::Approx(0.0005));
  for (const auto& h : r.history) {
    CHECK(std::isfinite(h.loss));
    CHECK(h.loss > 0);
  }
}

TEST_CASE("lambda zero keeps the reason head bit-identical through training") {
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.lambda = 0;
  cfg.epochs = 2;
  cfg.batch_size = 4;

  const TrainResult r = train_model(cfg, fixture().train, fixture().val);
  const ArNet fresh = ArNet::make(cfg.model);  // same seed, untouched weights
  const ParamSet fp = fresh.parameters();

  CHECK(same_tensor(ck_weight(r.last, "reason_head.w"), weight_named(fp, "reason_head.w")));
  CHECK(same_tensor(ck_weight(r.last, "reason_head.b"), weight_named(fp, "reason_head.b")));
  CHECK(!same_tensor(ck_weight(r.last, "action_head.w"), weight_named(fp, "action_head.w")));
  CHECK(!same_tensor(ck_weight(r.last, "backbone.stem.w"), weight_named(fp, "backbone.stem.w")));
}

TEST_CASE("checkpoints round-trip weights, config and fingerprint") {
  const TrainConfig cfg = desk_small();
  const ArNet model = ArNet::make(cfg.model);
  const Checkpoint ck = snapshot(model, cfg, 7, 0.625);
  const std::string print = checkpoint_fingerprint(ck);

  const fs::path path = fs::temp_directory_path() / "arnet_ck_roundtrip.ckpt";
  save_checkpoint(ck, path.string());
  const Checkpoint back = load_checkpoint(path.string());
  CHECK(back.epoch == 7);
  CHECK(back.best_metric == 0.625);
  CHECK(back.rng_state == ck.rng_state);
  CHECK(back.config_json == ck.config_json);
  REQUIRE(back.weights.size() == ck.weights.size());
  CHECK(checkpoint_fingerprint(back) == print);

  // the restored model computes bit-identical outputs
  const ArNet restored = model_from_checkpoint(back);
  std::mt19937_64 rng(57);
  Tensor x({1, 3, 32, 64});
  std::uniform_real_distribution<double> d(-1, 1);
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = Real(d(rng));
  const Tensor ya = model.forward(Var::leaf(x)).reason_logits.value();
  const Tensor yb = restored.forward(Var::leaf(x)).reason_logits.value();
  CHECK(same_tensor(ya, yb));

  // any weight flip shows in the fingerprint
  Checkpoint tweaked = ck;
  tweaked.weights[3].second[0] += Real(1e-3);
  CHECK(checkpoint_fingerprint(tweaked) != print);

  // weight-set mismatches are rejected
  Checkpoint short_ck = ck;
  short_ck.weights.pop_back();
  CHECK_THROWS_WITH(model_from_checkpoint(short_ck),
                    doctest::Contains("checkpoint weight mismatch"));

  std::remove(path.string().c_str());
  const fs::path junk = fs::temp_directory_path() / "arnet_junk.ckpt";
  std::FILE* f = std::fopen(junk.string().c_str(), "wb");
  std::fputs("JUNKJUNKJUNK", f);
  std::fclose(f);
  CHECK_THROWS_WITH(load_checkpoint(junk.string()), doctest::Contains("not a checkpoint"));
  std::remove(junk.string().c_str());
  CHECK_THROWS_AS(load_checkpoint("missing.ckpt"), DataError);
}

TEST_CASE("prediction is insensitive to the batch split") {
  TrainConfig cfg;
  cfg.model = tiny_model();
  const ArNet model = ArNet::make(cfg.model);
  const ModelOutput a = predict(model, fixture().train, 3);
  const ModelOutput b = predict(model, fixture().train, 8);
  REQUIRE(a.action_probs.size() == b.action_probs.size());
  for (std::size_t i = 0; i < a.action_probs.size(); ++i) {
    for (int k = 0; k < kNumActions; ++k)
      CHECK(a.action_probs[i][std::size_t(k)] ==
            doctest::Approx(b.action_probs[i][std::size_t(k)]).epsilon(1e-5));
    for (int k = 0; k < kNumReasons; ++k)
      CHECK(a.reason_probs[i][std::size_t(k)] ==
            doctest::Approx(b.reason_probs[i][std::size_t(k)]).epsilon(1e-5));
  }
}

TEST_CASE("model evaluation equals predicting plus scoring by hand") {
  TrainConfig cfg;
  cfg.model = tiny_model();
  const ArNet model = ArNet::make(cfg.model);
  const LoadedDataset& ds = fixture().train;
  const PairMatrix pm = PairMatrix::defaults();

  const MetricsReport rep = evaluate_model(model, ds, pm, true, {}, 4);

  const ModelOutput out = predict(model, ds, 4);
  BitMatrix ap(ds.size(), kNumActions), rp(ds.size(), kNumReasons);
  for (int i = 0; i < ds.size(); ++i) {
    for (int k = 0; k < kNumActions; ++k)
      ap.at(i, k) = out.actions[std::size_t(i)][std::size_t(k)];
    for (int k = 0; k < kNumReasons; ++k)
      rp.at(i, k) = out.reasons[std::size_t(i)][std::size_t(k)];
  }
  const MetricsReport want = build_report(ap, rp, ds.actions, ds.reasons, pm);
  CHECK(rep.action_overall == want.action_overall);
  CHECK(rep.reason_overall == want.reason_overall);
  CHECK(rep.joint_overall == want.joint_overall);
  CHECK(rep.samples == want.samples);
  CHECK(rep.split == "train");
}

TEST_CASE("a small model memorizes a tiny dataset") {
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.model.backbone = {8, 16, 24, 32};
  cfg.model.maspp.in_t2 = 16;
  cfg.model.maspp.in_t3 = 24;
  cfg.model.maspp.in_t4 = 32;
  cfg.model.maspp.branch_channels = 16;
  cfg.model.maspp.projection_out = 32;
  cfg.model.reduction = 4;
  cfg.model.trunk_channels = 32;
  cfg.model.hidden = 32;
  cfg.model.seed = 21;
  cfg.epochs = 300;
  cfg.batch_size = 4;
  cfg.lr = 0.02;
  cfg.momentum = 0.5;  // the default is tuned for the bigger profiles and overshoots here
  cfg.weight_decay = 0;
  cfg.lr_schedule = {{240, 0.2}};
  cfg.seed = 21;

  // validating against the training split itself: the best epoch must reach a
  // perfect score on all three summaries
  const TrainResult r = train_model(cfg, fixture().train, fixture().train);
  CHECK(r.best.best_metric == doctest::Approx(1.0));
  double best_action = 0, best_joint = 0;
  for (const auto& h : r.history) {
    best_action = std::max(best_action, h.val_action_overall);
    best_joint = std::max(best_joint, h.val_joint_overall);
  }
  CHECK(best_action == doctest::Approx(1.0));
  CHECK(best_joint == doctest::Approx(1.0));
}

TEST_CASE("sweeps train valid cells and mark impossible ones") {
  TrainConfig base = desk_small();  // checkpoint restore inside needs a profile
  base.epochs = 1;
  base.batch_size = 8;

  SweepGrid grid;
  grid.lambdas = {0, 1, kInf};
  grid.modes = {"predicted"};
  grid.reductions = {2, 3};

  std::vector<SweepRow> seen;
  const std::vector<SweepRow> rows = run_sweep(base, grid, fixture().train, fixture().val,
                                               [&](const SweepRow& r) { seen.push_back(r); });
  REQUIRE(rows.size() == 5);
  CHECK(seen.size() == 5);

  CHECK(rows[0].kind == "lambda");
  CHECK(!rows[0].skipped);  // lambda 0
  CHECK(!rows[1].skipped);  // lambda 1
  CHECK(rows[2].skipped);   // lambda inf + predicted
  CHECK(rows[2].reason.find("lambda=inf") != std::string::npos);

  CHECK(rows[3].kind == "reduction");
  CHECK(rows[3].reduction == 2);
  CHECK(!rows[3].skipped);
  AttentionConfig ac;
  ac.channels = base.model.maspp.projection_out;
  ac.reduction = 2;
  CHECK(rows[3].attention_params == attention_params(ac, base.model.attention_blocks));
  CHECK(rows[3].total_params > rows[3].attention_params);

  CHECK(rows[4].reduction == 3);
  CHECK(rows[4].skipped);  // 64 % 3 != 0
  CHECK(rows[4].reason.find("must divide") != std::string::npos);
}
