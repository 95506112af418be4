#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "arnet/cli.hpp"
#include "arnet/training.hpp"

using namespace arnet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  REQUIRE(f.good());
  f << text;
}

// run the CLI in-process, capturing what it prints to stdout
int run_cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::vector<const char*> argv{"arnet"};
  for (const auto& a : args) argv.push_back(a.c_str());

  std::cout.flush();
  std::fflush(stdout);
  const fs::path cap = fs::temp_directory_path() / "arnet_cli_stdout.txt";
  const int saved = dup(1);
  FILE* f = std::fopen(cap.string().c_str(), "w");
  dup2(fileno(f), 1);
  const int code = cli_main(static_cast<int>(argv.size()), argv.data());
  std::cout.flush();
  std::fflush(stdout);
  dup2(saved, 1);
  close(saved);
  std::fclose(f);
  if (out) *out = slurp(cap);
  return code;
}

// scratch area plus one small synthetic corpus, generated once
struct CliFixture {
  fs::path root;
  fs::path data;

  CliFixture() : root(fs::temp_directory_path() / "arnet_cli_test") {
    fs::remove_all(root);
    fs::create_directories(root);
    data = root / "synth";
    std::string out;
    REQUIRE(run_cli({"synth-gen", "--n", "12", "--seed", "5", "--out", data.string(),
                     "--height", "64", "--width", "96"},
                    &out) == 0);
    REQUIRE(out.find("wrote 12 scenes") != std::string::npos);
  }
  ~CliFixture() { fs::remove_all(root); }
};

CliFixture& fx() {
  static CliFixture f;
  return f;
}

std::string small_train_config() {
  json j;
  j["model"] = {{"input_h", 32}, {"input_w", 64}};
  j["epochs"] = 2;
  j["batch_size"] = 8;
  j["lr"] = 0.01;
  j["seed"] = 3;
  return j.dump();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("usage errors exit with code 1, data errors with 2") {
  CHECK(run_cli({}) == 1);                      // no subcommand
  CHECK(run_cli({"frobnicate"}) == 1);          // unknown subcommand
  CHECK(run_cli({"synth-gen", "--out", "x"}) == 1);  // missing required --n
  CHECK(run_cli({"synth-gen", "--n", "4", "--out", (fx().root / "u").string(),
                 "--bogus"}) == 1);             // unknown flag
  std::string help;
  CHECK(run_cli({"--help"}, &help) == 0);
  CHECK(help.find("synth-gen") != std::string::npos);

  // a structurally fine command with impossible data
  CHECK(run_cli({"synth-gen", "--n", "0", "--out", (fx().root / "u2").string()}) == 2);
  CHECK(run_cli({"metrics", "--predictions", (fx().root / "absent.jsonl").string()}) == 2);
}

TEST_CASE("generation is reproducible across runs") {
  const fs::path again = fx().root / "synth_again";
  REQUIRE(run_cli({"synth-gen", "--n", "12", "--seed", "5", "--out", again.string(),
                   "--height", "64", "--width", "96"}) == 0);
  for (const char* split : {"train", "val", "test"})
    CHECK(slurp(again / (std::string(split) + ".jsonl")) ==
          slurp(fx().data / (std::string(split) + ".jsonl")));
}

TEST_CASE("the metrics command scores a hand-written predictions log") {
  const fs::path dir = fx().root / "metrics_case";
  fs::create_directories(dir);

  // two samples: one perfect, one with a wrong action and a missed reason
  std::ostringstream log;
  log << json{{"type", "arnet-predictions"}, {"version", 1},
              {"checkpoint", "cafebabe"}, {"split", "test"}, {"theta", 0.5}}
             .dump()
      << '\n';
  std::vector<double> ap1{0.9, 0.1, 0.2, 0.3}, rp1(21, 0.1);
  rp1[0] = 0.8;
  std::vector<int> ag1{1, 0, 0, 0}, rg1(21, 0);
  rg1[0] = 1;
  log << json{{"id", "a"}, {"action_probs", ap1}, {"reason_probs", rp1},
              {"gt_actions", ag1}, {"gt_reasons", rg1}}
             .dump()
      << '\n';
  std::vector<double> ap2{0.2, 0.9, 0.1, 0.1}, rp2(21, 0.1);
  std::vector<int> ag2{1, 0, 0, 0}, rg2(21, 0);
  rg2[1] = 1;
  log << json{{"id", "b"}, {"action_probs", ap2}, {"reason_probs", rp2},
              {"gt_actions", ag2}, {"gt_reasons", rg2}}
             .dump()
      << '\n';
  spit(dir / "predictions.jsonl", log.str());

  std::string out;
  REQUIRE(run_cli({"metrics", "--predictions", (dir / "predictions.jsonl").string(),
                   "--out", (dir / "report").string()},
                  &out) == 0);
  CHECK(out.find("samples: 2") != std::string::npos);

  // score the same bits directly as the reference
  BitMatrix pa(2, kNumActions), pr(2, kNumReasons), ga(2, kNumActions), gr(2, kNumReasons);
  pa.at(0, 0) = 1;
  pr.at(0, 0) = 1;
  ga.at(0, 0) = 1;
  gr.at(0, 0) = 1;
  pa.at(1, 1) = 1;
  ga.at(1, 0) = 1;
  gr.at(1, 1) = 1;
  const MetricsReport want =
      build_report(pa, pr, ga, gr, PairMatrix::defaults(), true, {});

  const json rep = json::parse(slurp(dir / "report" / "report.json"));
  CHECK(rep["samples"] == 2);
  CHECK(rep["checkpoint"] == "cafebabe");
  CHECK(rep["split"] == "test");
  CHECK(rep["action_overall"].get<double>() == doctest::Approx(want.action_overall));
  CHECK(rep["reason_overall"].get<double>() == doctest::Approx(want.reason_overall));
  CHECK(rep["joint_overall"].get<double>() == doctest::Approx(want.joint_overall));

  // corrupt logs are data errors
  spit(dir / "bad.jsonl", "{not json\n");
  CHECK(run_cli({"metrics", "--predictions", (dir / "bad.jsonl").string()}) == 2);
  spit(dir / "wrong.jsonl", json{{"type", "something-else"}}.dump() + "\n");
  CHECK(run_cli({"metrics", "--predictions", (dir / "wrong.jsonl").string()}) == 2);
  spit(dir / "empty.jsonl",
       json{{"type", "arnet-predictions"}, {"version", 1}}.dump() + "\n");
  CHECK(run_cli({"metrics", "--predictions", (dir / "empty.jsonl").string()}) == 2);
}

TEST_CASE("train writes a complete run directory and refuses a locked one") {
  const fs::path run = fx().root / "run1";
  const fs::path cfg_path = fx().root / "train_config.json";
  spit(cfg_path, small_train_config());

  // a leftover lock marks the directory as busy
  fs::create_directories(run);
  spit(run / "lock", "locked\n");
  CHECK(run_cli({"train", "--config", cfg_path.string(), "--data", fx().data.string(),
                 "--out", run.string()}) == 2);
  CHECK(!fs::exists(run / "config.json"));

  fs::remove(run / "lock");
  std::string out;
  REQUIRE(run_cli({"train", "--config", cfg_path.string(), "--data", fx().data.string(),
                   "--out", run.string()},
                  &out) == 0);
  CHECK(out.find("train 8 samples, val 1 samples") != std::string::npos);
  CHECK(out.find("epoch 2/2") != std::string::npos);

  CHECK(fs::exists(run / "config.json"));
  CHECK(fs::exists(run / "checkpoints" / "best.ckpt"));
  CHECK(fs::exists(run / "checkpoints" / "last.ckpt"));
  CHECK(fs::exists(run / "reports" / "val.txt"));
  CHECK(fs::exists(run / "reports" / "val.csv"));
  CHECK(!fs::exists(run / "lock"));  // released on success
  CHECK(count_lines(slurp(run / "history.jsonl")) == 2);
  const json hist = json::parse(slurp(run / "history.jsonl").substr(
      0, slurp(run / "history.jsonl").find('\n')));
  CHECK(hist["epoch"] == 1);
  CHECK(hist["lr"].get<double>() == doctest::Approx(0.01));

  const json rep = json::parse(slurp(run / "reports" / "val.json"));
  CHECK(rep["samples"] == 1);
  CHECK(rep["split"] == "val");
  CHECK(!rep["checkpoint"].get<std::string>().empty());
}

TEST_CASE("eval emits reports plus a rescorable predictions log") {
  const fs::path run = fx().root / "run1";  // produced by the train case
  REQUIRE(fs::exists(run / "checkpoints" / "best.ckpt"));
  const fs::path out = fx().root / "eval1";

  REQUIRE(run_cli({"eval", "--checkpoint", (run / "checkpoints" / "best.ckpt").string(),
                   "--data", (fx().data / "test.jsonl").string(), "--out",
                   out.string()}) == 0);

  const std::string log = slurp(out / "predictions.jsonl");
  CHECK(count_lines(log) == 4);  // header + three test scenes
  const json head = json::parse(log.substr(0, log.find('\n')));
  CHECK(head["type"] == "arnet-predictions");
  CHECK(head["theta"] == 0.5);
  CHECK(head["split"] == "test");

  // rescoring the log reproduces the report exactly
  const fs::path rescored = fx().root / "rescore1";
  REQUIRE(run_cli({"metrics", "--predictions", (out / "predictions.jsonl").string(),
                   "--out", rescored.string()}) == 0);
  const json a = json::parse(slurp(out / "report.json"));
  const json b = json::parse(slurp(rescored / "report.json"));
  CHECK(a["action_overall"] == b["action_overall"]);
  CHECK(a["reason_overall"] == b["reason_overall"]);
  CHECK(a["joint_overall"] == b["joint_overall"]);
  CHECK(a["checkpoint"] == b["checkpoint"]);

  // the decision threshold is an eval-time knob
  const fs::path out2 = fx().root / "eval_theta";
  REQUIRE(run_cli({"eval", "--checkpoint", (run / "checkpoints" / "best.ckpt").string(),
                   "--data", (fx().data / "test.jsonl").string(), "--out", out2.string(),
                   "--theta", "0.7"}) == 0);
  const std::string log2 = slurp(out2 / "predictions.jsonl");
  CHECK(json::parse(log2.substr(0, log2.find('\n')))["theta"] == 0.7);
}

TEST_CASE("explain writes an overlay and sidecar next to each other") {
  // a hand-built checkpoint whose action head always fires
  TrainConfig cfg;
  cfg.model.input_h = 32;
  cfg.model.input_w = 64;
  const ArNet model = ArNet::make(cfg.model);
  {
    ParamSet ps = model.parameters();
    for (auto& p : ps.params)
      if (p.name == "action_head.b") {
        Tensor& b = p.var.value_mut();
        b = Tensor(b.shape(), Real(3));
      }
  }
  const fs::path ck = fx().root / "decisive.ckpt";
  save_checkpoint(snapshot(model, cfg, 1, 0), ck.string());

  fs::path image;
  for (const auto& e : fs::recursive_directory_iterator(fx().data))
    if (e.path().extension() == ".png") {
      image = e.path();
      break;
    }
  REQUIRE(!image.empty());

  const fs::path out = fx().root / "overlay";
  std::string text;
  REQUIRE(run_cli({"explain", "--checkpoint", ck.string(), "--image", image.string(),
                   "--out", out.string()},
                  &text) == 0);
  CHECK(text.find("decided actions:") != std::string::npos);
  const std::string stem = image.stem().string();
  CHECK(fs::exists(out / (stem + ".png")));
  CHECK(fs::exists(out / (stem + ".json")));
  const json side = json::parse(slurp(out / (stem + ".json")));
  CHECK(side["target"] == "trunk.conv3");
  CHECK(side["score_terms"].size() >= 4);

  // target names outside the known set are rejected at parse time
  CHECK(run_cli({"explain", "--checkpoint", ck.string(), "--image", image.string(),
                 "--out", out.string(), "--target", "embedding"}) == 1);
}

TEST_CASE("sweep writes one row per grid cell") {
  const fs::path dir = fx().root / "sweep";
  fs::create_directories(dir);
  spit(dir / "grid.json",
       json{{"lambdas", {1.0}}, {"modes", {"predicted"}}, {"reductions", {3}}}.dump());
  const fs::path cfg_path = fx().root / "train_config.json";
  spit(cfg_path, small_train_config());

  std::string out;
  REQUIRE(run_cli({"sweep", "--grid", (dir / "grid.json").string(), "--config",
                   cfg_path.string(), "--data", fx().data.string(), "--out",
                   (dir / "out").string()},
                  &out) == 0);
  CHECK(out.find("skipped") != std::string::npos);

  const json rows = json::parse(slurp(dir / "out" / "sweep.json"));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0]["kind"] == "lambda");
  CHECK(rows[0]["skipped"] == false);
  CHECK(rows[1]["kind"] == "reduction");
  CHECK(rows[1]["skipped"] == true);
  CHECK(rows[1]["reason"].get<std::string>().find("must divide") != std::string::npos);
  const std::string csv = slurp(dir / "out" / "sweep.csv");
  CHECK(csv.rfind("kind,lambda,mode,reduction,skipped,", 0) == 0);
  CHECK(count_lines(csv) == 3);  // header + two rows

  // an import pointed at nothing is a data error, not a crash
  CHECK(run_cli({"import", "--format", "bdd-oia", "--root",
                 (fx().root / "nowhere").string(), "--out",
                 (fx().root / "imported").string()}) == 2);
}
