#include "arnet/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "arnet/dataset.hpp"
#include "arnet/gradcam.hpp"
#include "arnet/metrics.hpp"
#include "arnet/synth.hpp"
#include "arnet/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace arnet {
namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot write " + path);
  f << text;
}

// One writer per run directory.  Exclusive create; removed when the command
// finishes, so a leftover file marks a crashed or concurrent run.
struct RunLock {
  fs::path path;
  explicit RunLock(const fs::path& dir) : path(dir / "lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    FILE* f = std::fopen(path.string().c_str(), "wx");
    require(f != nullptr,
            "run directory is busy: " + path.string() +
                " exists (remove it if no other process is writing here)");
    std::fputs("locked\n", f);
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path, ec);
  }
};

PairMatrix pairs_or_default(const std::string& path) {
  return path.empty() ? PairMatrix::defaults() : PairMatrix::load(path);
}

F1Options f1_options(const std::string& empty_policy, const std::string& overall) {
  F1Options opt;
  if (empty_policy == "zero")
    opt.empty = F1Options::EmptyPolicy::kZero;
  else
    require(empty_policy == "one", "empty policy must be one or zero");
  if (overall == "micro")
    opt.overall = F1Options::OverallPolicy::kMicro;
  else
    require(overall == "sample", "overall policy must be sample or micro");
  return opt;
}

json bits_json(const Bits& b) {
  json a = json::array();
  for (auto v : b) a.push_back(static_cast<int>(v));
  return a;
}

Bits bits_from_json(const json& a, int arity, const char* what) {
  require(a.is_array() && static_cast<int>(a.size()) == arity,
          std::string(what) + " must be an array of length " + std::to_string(arity));
  Bits b;
  for (const auto& v : a) b.push_back(v.get<double>() > 0.5 ? 1 : 0);
  return b;
}

void write_report_files(const MetricsReport& rep, const fs::path& dir,
                        const std::string& stem) {
  fs::create_directories(dir);
  spit((dir / (stem + ".txt")).string(), render_text(rep));
  spit((dir / (stem + ".csv")).string(), render_csv(rep));
  spit((dir / (stem + ".json")).string(), render_json(rep));
}

void write_predictions(const fs::path& path, const ModelOutput& out,
                       const LoadedDataset& ds, const std::string& checkpoint,
                       double theta) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot write " + path.string());
  json head{{"type", "arnet-predictions"},
            {"version", 1},
            {"checkpoint", checkpoint},
            {"split", ds.split},
            {"theta", theta}};
  f << head.dump() << '\n';
  for (int i = 0; i < ds.size(); ++i) {
    json rec{{"id", ds.ids[static_cast<std::size_t>(i)]},
             {"action_probs", out.action_probs[static_cast<std::size_t>(i)]},
             {"reason_probs", out.reason_probs[static_cast<std::size_t>(i)]},
             {"gt_actions", bits_json(ds.actions.row(i))},
             {"gt_reasons", bits_json(ds.reasons.row(i))}};
    f << rec.dump() << '\n';
  }
}

std::string round3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

struct SynthGenArgs {
  int n = 0;
  std::uint64_t seed = 7;
  std::string out;
  SynthOptions opts;
};

int run_synth_gen(const SynthGenArgs& a) {
  const SynthSummary s = generate_dataset(a.n, a.seed, a.out, a.opts);
  std::cout << "wrote " << s.total << " scenes under " << a.out << " (train " << s.train
            << " / val " << s.val << " / test " << s.test << ")\n";
  std::cout << "actions:";
  for (int i = 0; i < kNumActions; ++i)
    std::cout << ' ' << kActionNames[static_cast<std::size_t>(i)] << '='
              << s.counts.actions[static_cast<std::size_t>(i)];
  std::cout << '\n';
  return 0;
}

struct ImportArgs {
  std::string format, root, out, split = "all";
};

int run_import(const ImportArgs& a) {
  require(!a.root.empty(),
          "no dataset root given: pass --root or set ARNET_DATA_ROOT");
  std::vector<std::string> splits;
  if (a.split == "all")
    splits = {"train", "val", "test"};
  else
    splits = {a.split};
  fs::create_directories(a.out);
  for (const auto& split : splits) {
    DatasetManifest m = a.format == "bdd-oia" ? import_bdd_oia(a.root, split)
                                              : import_nu_ar(a.root, split);
    write_manifest(m, (fs::path(a.out) / (split + ".jsonl")).string());
    const ClassCounts c = class_counts(m);
    std::cout << split << ": " << c.samples << " samples  actions";
    for (int i = 0; i < kNumActions; ++i)
      std::cout << ' ' << kActionNames[static_cast<std::size_t>(i)] << '='
                << c.actions[static_cast<std::size_t>(i)];
    std::cout << '\n';
  }
  return 0;
}

struct TrainArgs {
  std::string config, data, out;
};

json stats_json(const EpochStats& st) {
  return json{{"epoch", st.epoch},
              {"lr", st.lr},
              {"loss", st.loss},
              {"action_loss", st.action_loss},
              {"reason_loss", st.reason_loss},
              {"val_action_overall", st.val_action_overall},
              {"val_reason_overall", st.val_reason_overall},
              {"val_joint_overall", st.val_joint_overall}};
}

int run_train(const TrainArgs& a, const TrainConfig& cfg) {
  validate_config(cfg);
  const fs::path run(a.out);
  RunLock lock(run);
  fs::create_directories(run / "checkpoints");
  fs::create_directories(run / "reports");
  fs::create_directories(run / "overlays");
  // config goes down before any checkpoint so a run directory is always
  // reproducible from its own files
  spit((run / "config.json").string(), config_to_json(cfg) + "\n");

  const DatasetManifest train_m =
      read_manifest((fs::path(a.data) / "train.jsonl").string());
  const DatasetManifest val_m = read_manifest((fs::path(a.data) / "val.jsonl").string());
  const LoadedDataset train_set =
      LoadedDataset::load(train_m, cfg.model.input_h, cfg.model.input_w);
  const LoadedDataset val_set =
      LoadedDataset::load(val_m, cfg.model.input_h, cfg.model.input_w);
  std::cout << "train " << train_set.size() << " samples, val " << val_set.size()
            << " samples\n";

  std::ofstream hist((run / "history.jsonl").string(), std::ios::binary);
  require(hist.good(), "cannot write history.jsonl");
  const TrainResult res =
      train_model(cfg, train_set, val_set, [&](const EpochStats& st) {
        hist << stats_json(st).dump() << '\n';
        hist.flush();
        std::cout << "epoch " << st.epoch << '/' << cfg.epochs << " lr " << round3(st.lr)
                  << " loss " << round3(st.loss) << " action " << round3(st.action_loss)
                  << " reason " << round3(st.reason_loss) << " | val action "
                  << round3(st.val_action_overall) << " reason "
                  << round3(st.val_reason_overall) << " joint "
                  << round3(st.val_joint_overall) << '\n';
      });

  save_checkpoint(res.best, (run / "checkpoints" / "best.ckpt").string());
  save_checkpoint(res.last, (run / "checkpoints" / "last.ckpt").string());

  const ArNet best = model_from_checkpoint(res.best);
  MetricsReport rep = evaluate_model(best, val_set, PairMatrix::defaults());
  rep.checkpoint = checkpoint_fingerprint(res.best);
  write_report_files(rep, run / "reports", "val");
  std::cout << render_text(rep);
  std::cout << "run artifacts under " << run.string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, pairs, out;
  double theta = 0.5;
  std::string empty_policy = "one", overall = "sample";
  int batch = 16;
};

int run_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  ArNet model = model_from_checkpoint(ck);
  model.cfg.threshold = a.theta;
  const std::string digest = checkpoint_fingerprint(ck);

  const DatasetManifest m = read_manifest(a.data);
  const LoadedDataset ds = LoadedDataset::load(m, model.cfg.input_h, model.cfg.input_w);
  const PairMatrix pm = pairs_or_default(a.pairs);
  const F1Options opt = f1_options(a.empty_policy, a.overall);

  const ModelOutput out = predict(model, ds, a.batch, &ds.actions);
  BitMatrix action_pred(ds.size(), kNumActions), reason_pred(ds.size(), kNumReasons);
  for (int i = 0; i < ds.size(); ++i) {
    for (int k = 0; k < kNumActions; ++k)
      action_pred.at(i, k) = out.actions[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    for (int k = 0; k < kNumReasons; ++k)
      reason_pred.at(i, k) = out.reasons[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  }
  MetricsReport rep =
      build_report(action_pred, reason_pred, ds.actions, ds.reasons, pm, true, opt);
  rep.checkpoint = digest;
  rep.split = ds.split;

  fs::create_directories(a.out);
  write_report_files(rep, a.out, "report");
  write_predictions(fs::path(a.out) / "predictions.jsonl", out, ds, digest, a.theta);
  std::cout << render_text(rep);
  return 0;
}

struct MetricsArgs {
  std::string predictions, pairs, out;
  double theta = 0.5;
  std::string empty_policy = "one", overall = "sample";
};

int run_metrics(const MetricsArgs& a) {
  std::ifstream f(a.predictions, std::ios::binary);
  require(f.good(), "cannot open " + a.predictions);

  std::string checkpoint, split;
  std::vector<Bits> ap, rp, ag, rg;
  std::string line;
  int lineno = 0;
  const DecisionConfig dc{a.theta};
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("bad predictions line " + std::to_string(lineno) + ": " + e.what());
    }
    if (j.contains("type")) {  // header
      require(j["type"] == "arnet-predictions",
              "not a predictions log: " + a.predictions);
      checkpoint = j.value("checkpoint", "");
      split = j.value("split", "");
      continue;
    }
    try {
      ap.push_back(decide(j.at("action_probs").get<std::vector<double>>(), dc));
      rp.push_back(decide(j.at("reason_probs").get<std::vector<double>>(), dc));
      ag.push_back(bits_from_json(j.at("gt_actions"), kNumActions, "gt_actions"));
      rg.push_back(bits_from_json(j.at("gt_reasons"), kNumReasons, "gt_reasons"));
    } catch (const json::exception& e) {
      throw DataError("bad predictions line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  require(!ap.empty(), "predictions log has no records: " + a.predictions);

  const int n = static_cast<int>(ap.size());
  BitMatrix action_pred(n, kNumActions), reason_pred(n, kNumReasons);
  BitMatrix action_gt(n, kNumActions), reason_gt(n, kNumReasons);
  for (int i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    for (int k = 0; k < kNumActions; ++k) {
      action_pred.at(i, k) = ap[u][static_cast<std::size_t>(k)];
      action_gt.at(i, k) = ag[u][static_cast<std::size_t>(k)];
    }
    for (int k = 0; k < kNumReasons; ++k) {
      reason_pred.at(i, k) = rp[u][static_cast<std::size_t>(k)];
      reason_gt.at(i, k) = rg[u][static_cast<std::size_t>(k)];
    }
  }

  const PairMatrix pm = pairs_or_default(a.pairs);
  const F1Options opt = f1_options(a.empty_policy, a.overall);
  MetricsReport rep =
      build_report(action_pred, reason_pred, action_gt, reason_gt, pm, true, opt);
  rep.checkpoint = checkpoint;
  rep.split = split;
  if (!a.out.empty()) write_report_files(rep, a.out, "report");
  std::cout << render_text(rep);
  return 0;
}

struct ExplainArgs {
  std::string checkpoint, image, out;
  std::string target = "trunk.conv3";
  double alpha = 0.6;
};

int run_explain(const ExplainArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const ArNet model = model_from_checkpoint(ck);
  const ImageU8 img =
      resize_image(to_rgb(read_png(a.image)), model.cfg.input_h, model.cfg.input_w);
  const Tensor input = model.normalize({img.data.data()}, img.height, img.width);

  const ForwardTrace trace = model.forward(Var::leaf(input, false));
  const ModelOutput out = model.read_output(trace);
  const Heatmap hm = gradcam(model, input, a.target);

  const std::string stem = fs::path(a.image).stem().string();
  fs::create_directories(a.out);
  write_explanation(a.out, stem, img, hm, out);

  std::cout << "decided actions:";
  for (const auto& t : hm.terms)
    if (t.kind == "action") std::cout << ' ' << t.name;
  std::cout << "\ndecided reasons:";
  for (const auto& t : hm.terms)
    if (t.kind == "reason") std::cout << ' ' << t.name;
  std::cout << "\nwrote " << (fs::path(a.out) / (stem + ".png")).string() << " and "
            << (fs::path(a.out) / (stem + ".json")).string() << '\n';
  return 0;
}

struct SweepArgs {
  std::string grid, config, data, out;
};

int run_sweep_cmd(const SweepArgs& a, TrainConfig base) {
  const json g = json::parse(slurp(a.grid));
  SweepGrid grid;
  if (g.contains("lambdas"))
    for (const auto& v : g["lambdas"])
      grid.lambdas.push_back(v.is_string() ? std::numeric_limits<double>::infinity()
                                           : v.get<double>());
  if (g.contains("modes"))
    for (const auto& v : g["modes"]) grid.modes.push_back(v.get<std::string>());
  if (g.contains("reductions"))
    for (const auto& v : g["reductions"]) grid.reductions.push_back(v.get<int>());

  const DatasetManifest train_m =
      read_manifest((fs::path(a.data) / "train.jsonl").string());
  const DatasetManifest val_m = read_manifest((fs::path(a.data) / "val.jsonl").string());
  const LoadedDataset train_set =
      LoadedDataset::load(train_m, base.model.input_h, base.model.input_w);
  const LoadedDataset val_set =
      LoadedDataset::load(val_m, base.model.input_h, base.model.input_w);

  const std::vector<SweepRow> rows =
      run_sweep(base, grid, train_set, val_set, [](const SweepRow& r) {
        std::cout << r.kind << " lambda=" << r.lambda << " mode=" << r.mode
                  << " r=" << r.reduction;
        if (r.skipped)
          std::cout << "  skipped: " << r.reason << '\n';
        else
          std::cout << "  action " << round3(r.action_overall) << " reason "
                    << round3(r.reason_overall) << " joint " << round3(r.joint_overall)
                    << '\n';
      });

  fs::create_directories(a.out);
  std::ostringstream csv;
  csv << "kind,lambda,mode,reduction,skipped,reason,action_overall,reason_overall,"
         "joint_overall,attention_params,total_params\n";
  json rows_json = json::array();
  for (const auto& r : rows) {
    csv << r.kind << ',' << r.lambda << ',' << r.mode << ',' << r.reduction << ','
        << (r.skipped ? 1 : 0) << ',' << '"' << r.reason << '"' << ','
        << r.action_overall << ',' << r.reason_overall << ',' << r.joint_overall << ','
        << r.attention_params << ',' << r.total_params << '\n';
    rows_json.push_back({{"kind", r.kind},
                         {"lambda", std::isinf(r.lambda) ? json("inf") : json(r.lambda)},
                         {"mode", r.mode},
                         {"reduction", r.reduction},
                         {"skipped", r.skipped},
                         {"reason", r.reason},
                         {"action_overall", r.action_overall},
                         {"reason_overall", r.reason_overall},
                         {"joint_overall", r.joint_overall},
                         {"attention_params", r.attention_params},
                         {"total_params", r.total_params}});
  }
  spit((fs::path(a.out) / "sweep.csv").string(), csv.str());
  spit((fs::path(a.out) / "sweep.json").string(), rows_json.dump(2) + "\n");
  std::cout << "wrote " << (fs::path(a.out) / "sweep.csv").string() << '\n';
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"action/reason driving model: data, training, evaluation, explanation"};
  app.require_subcommand(1);

  SynthGenArgs sg;
  auto* c_sg = app.add_subcommand("synth-gen", "generate a synthetic scene dataset");
  c_sg->add_option("--n", sg.n, "number of scenes")->required();
  c_sg->add_option("--seed", sg.seed, "generator seed");
  c_sg->add_option("--out", sg.out, "output directory")->required();
  c_sg->add_option("--height", sg.opts.height, "image height");
  c_sg->add_option("--width", sg.opts.width, "image width");
  c_sg->add_option("--train-frac", sg.opts.train_frac, "train fraction");
  c_sg->add_option("--val-frac", sg.opts.val_frac, "val fraction");
  c_sg->add_option("--label-noise", sg.opts.label_noise, "per-bit flip probability");

  ImportArgs im;
  if (const char* env = std::getenv("ARNET_DATA_ROOT")) im.root = env;
  auto* c_im = app.add_subcommand("import", "convert an external corpus to manifests");
  c_im->add_option("--format", im.format, "bdd-oia or nu-ar")
      ->required()
      ->check(CLI::IsMember({"bdd-oia", "nu-ar"}));
  c_im->add_option("--root", im.root,
                   "corpus root (defaults to $ARNET_DATA_ROOT)");
  c_im->add_option("--out", im.out, "output directory")->required();
  c_im->add_option("--split", im.split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));

  TrainArgs tr;
  struct {
    int epochs = 0, batch = 0;
    double lr = 0, lambda = 0;
    std::string reason_input, profile;
    std::uint64_t seed = 0;
  } ov;
  auto* c_tr = app.add_subcommand("train", "train a model into a run directory");
  c_tr->add_option("--config", tr.config, "training config JSON");
  c_tr->add_option("--data", tr.data, "directory with train.jsonl and val.jsonl")
      ->required();
  c_tr->add_option("--out", tr.out, "run directory")->required();
  auto* o_epochs = c_tr->add_option("--epochs", ov.epochs, "override epoch count");
  auto* o_batch = c_tr->add_option("--batch", ov.batch, "override batch size");
  auto* o_lr = c_tr->add_option("--lr", ov.lr, "override learning rate");
  auto* o_lambda = c_tr->add_option("--lambda", ov.lambda, "override reason weight");
  auto* o_mode = c_tr->add_option("--reason-input", ov.reason_input,
                                  "predicted, oracle or detached")
                     ->check(CLI::IsMember({"predicted", "oracle", "detached"}));
  auto* o_profile = c_tr->add_option("--profile", ov.profile, "desk or paper")
                        ->check(CLI::IsMember({"desk", "paper"}));
  auto* o_seed = c_tr->add_option("--seed", ov.seed, "override seed");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  c_ev->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  c_ev->add_option("--data", ev.data, "manifest file")->required();
  c_ev->add_option("--pairs", ev.pairs, "pair matrix JSON (default built-in)");
  c_ev->add_option("--out", ev.out, "report directory")->required();
  c_ev->add_option("--theta", ev.theta, "decision threshold");
  c_ev->add_option("--empty-policy", ev.empty_policy, "one or zero")
      ->check(CLI::IsMember({"one", "zero"}));
  c_ev->add_option("--overall", ev.overall, "sample or micro")
      ->check(CLI::IsMember({"sample", "micro"}));
  c_ev->add_option("--batch", ev.batch, "inference batch size");

  MetricsArgs me;
  auto* c_me = app.add_subcommand("metrics", "score a predictions log");
  c_me->add_option("--predictions", me.predictions, "predictions JSONL")->required();
  c_me->add_option("--pairs", me.pairs, "pair matrix JSON (default built-in)");
  c_me->add_option("--theta", me.theta, "decision threshold");
  c_me->add_option("--empty-policy", me.empty_policy, "one or zero")
      ->check(CLI::IsMember({"one", "zero"}));
  c_me->add_option("--overall", me.overall, "sample or micro")
      ->check(CLI::IsMember({"sample", "micro"}));
  c_me->add_option("--out", me.out, "report directory (optional)");

  ExplainArgs ex;
  auto* c_ex = app.add_subcommand("explain", "attribution overlay for one image");
  c_ex->add_option("--checkpoint", ex.checkpoint, "checkpoint file")->required();
  c_ex->add_option("--image", ex.image, "input PNG")->required();
  c_ex->add_option("--out", ex.out, "output directory")->required();
  c_ex->add_option("--target", ex.target, "trunk.conv3, attention.out or maspp.out")
      ->check(CLI::IsMember({"trunk.conv3", "attention.out", "maspp.out"}));
  c_ex->add_option("--alpha", ex.alpha, "overlay opacity");

  SweepArgs sw;
  auto* c_sw = app.add_subcommand("sweep", "ablation sweep over a parameter grid");
  c_sw->add_option("--grid", sw.grid, "grid JSON (lambdas, modes, reductions)")
      ->required();
  c_sw->add_option("--config", sw.config, "base training config JSON");
  c_sw->add_option("--data", sw.data, "directory with train.jsonl and val.jsonl")
      ->required();
  c_sw->add_option("--out", sw.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // --help exits cleanly, everything else is usage
  }

  try {
    if (c_sg->parsed()) return run_synth_gen(sg);
    if (c_im->parsed()) return run_import(im);
    if (c_tr->parsed()) {
      TrainConfig cfg;
      if (!tr.config.empty()) cfg = config_from_json(slurp(tr.config));
      if (*o_profile) {
        cfg.model.profile = ov.profile;
        cfg.model.apply_profile();
      }
      if (*o_epochs) cfg.epochs = ov.epochs;
      if (*o_batch) cfg.batch_size = ov.batch;
      if (*o_lr) cfg.lr = ov.lr;
      if (*o_lambda) cfg.lambda = ov.lambda;
      if (*o_mode) cfg.model.reason_input = reason_input_from_string(ov.reason_input);
      if (*o_seed) {
        cfg.seed = ov.seed;
        cfg.model.seed = ov.seed;
      }
      return run_train(tr, cfg);
    }
    if (c_ev->parsed()) return run_eval(ev);
    if (c_me->parsed()) return run_metrics(me);
    if (c_ex->parsed()) return run_explain(ex);
    if (c_sw->parsed()) {
      TrainConfig base;
      if (!sw.config.empty()) base = config_from_json(slurp(sw.config));
      return run_sweep_cmd(sw, base);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace arnet
