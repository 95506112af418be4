#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "arnet/metrics.hpp"

using namespace arnet;

namespace {

Bits bits(int n, std::initializer_list<int> ones) {
  Bits b(std::size_t(n), 0);
  for (int i : ones) b[std::size_t(i)] = 1;
  return b;
}

BitMatrix random_matrix(std::mt19937_64& rng, int rows, int cols, double p = 0.4) {
  BitMatrix m(rows, cols);
  std::bernoulli_distribution d(p);
  for (auto& v : m.v) v = d(rng) ? 1 : 0;
  return m;
}

// independent re-computation of every aggregate, straight from the counts
struct Oracle {
  double overall_sample = 0, overall_micro = 0, macro = 0;
  std::vector<double> per_class;
};

Oracle score(const BitMatrix& pred, const BitMatrix& gt, bool empty_is_one) {
  Oracle o;
  std::int64_t tp_all = 0, p_all = 0, g_all = 0;
  for (int r = 0; r < pred.rows; ++r) {
    std::int64_t tp = 0, np = 0, ng = 0;
    for (int c = 0; c < pred.cols; ++c) {
      tp += pred.at(r, c) & gt.at(r, c);
      np += pred.at(r, c);
      ng += gt.at(r, c);
    }
    tp_all += tp;
    p_all += np;
    g_all += ng;
    o.overall_sample +=
        (np + ng == 0) ? (empty_is_one ? 1.0 : 0.0) : 2.0 * double(tp) / double(np + ng);
  }
  o.overall_sample /= pred.rows;
  o.overall_micro = (p_all + g_all == 0) ? (empty_is_one ? 1.0 : 0.0)
                                         : 2.0 * double(tp_all) / double(p_all + g_all);
  for (int c = 0; c < pred.cols; ++c) {
    std::int64_t tp = 0, np = 0, ng = 0;
    for (int r = 0; r < pred.rows; ++r) {
      tp += pred.at(r, c) & gt.at(r, c);
      np += pred.at(r, c);
      ng += gt.at(r, c);
    }
    o.per_class.push_back(np + ng == 0 ? 0.0 : 2.0 * double(tp) / double(np + ng));
    o.macro += o.per_class.back();
  }
  o.macro /= pred.cols;
  return o;
}

}  // namespace

TEST_CASE("per-sample F1 follows the two-thirds hand example") {
  // |p & g| = 1, |p| = 2, |g| = 1 -> 2/3
  CHECK(f1_sample(bits(4, {0, 2}), bits(4, {0})) == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(f1_sample(bits(3, {1, 2}), bits(3, {0, 1})) == doctest::Approx(0.5));
  CHECK(f1_sample(bits(3, {0}), bits(3, {1})) == 0.0);
  CHECK(f1_sample(bits(3, {0, 1, 2}), bits(3, {0, 1, 2})) == 1.0);
}

TEST_CASE("empty-against-empty honors the policy switch") {
  F1Options opt;
  CHECK(f1_sample(bits(5, {}), bits(5, {}), opt) == 1.0);
  opt.empty = F1Options::EmptyPolicy::kZero;
  CHECK(f1_sample(bits(5, {}), bits(5, {}), opt) == 0.0);
  // non-empty prediction against empty truth is 0 either way
  CHECK(f1_sample(bits(5, {1}), bits(5, {}), opt) == 0.0);
  opt.empty = F1Options::EmptyPolicy::kOne;
  CHECK(f1_sample(bits(5, {1}), bits(5, {}), opt) == 0.0);
}

TEST_CASE("overall F1 averages samples or pools counts") {
  BitMatrix pred(2, 3), gt(2, 3);
  // row 0: p={0}, g={0} -> 1; row 1: p={1,2}, g={0,1} -> 0.5
  pred.at(0, 0) = 1;
  gt.at(0, 0) = 1;
  pred.at(1, 1) = pred.at(1, 2) = 1;
  gt.at(1, 0) = gt.at(1, 1) = 1;

  F1Options opt;
  CHECK(f1_overall(pred, gt, opt) == doctest::Approx(0.75));
  opt.overall = F1Options::OverallPolicy::kMicro;
  // pooled: tp=2, |p|=3, |g|=3 -> 4/6
  CHECK(f1_overall(pred, gt, opt) == doctest::Approx(2.0 / 3));
}

TEST_CASE("per-class counts match a hand-built fixture") {
  BitMatrix pred(3, 2), gt(3, 2);
  pred.at(0, 0) = 1;            // tp for class 0
  gt.at(0, 0) = 1;
  pred.at(1, 0) = 1;            // fp for class 0
  gt.at(2, 0) = 1;              // fn for class 0
  gt.at(1, 1) = 1;              // fn for class 1, never predicted

  const PerClass pc = per_class_f1(pred, gt);
  REQUIRE(pc.f1.size() == 2);
  CHECK(pc.tp == std::vector<std::int64_t>{1, 0});
  CHECK(pc.fp == std::vector<std::int64_t>{1, 0});
  CHECK(pc.fn == std::vector<std::int64_t>{1, 1});
  CHECK(pc.support == std::vector<std::int64_t>{2, 1});
  CHECK(pc.f1[0] == doctest::Approx(0.5));  // 2*1/(2*1+1+1)
  CHECK(pc.f1[1] == 0.0);
}

TEST_CASE("macro F1 scores untouched classes as zero") {
  BitMatrix pred(2, 3), gt(2, 3);
  pred.at(0, 0) = gt.at(0, 0) = 1;  // class 0 perfect
  // classes 1 and 2 have no support and no predictions
  CHECK(f1_mean(pred, gt) == doctest::Approx(1.0 / 3));
}

TEST_CASE("aggregates match a brute-force oracle over random matrices") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    const int rows = 1 + int(rng() % 8);
    const int cols = 1 + int(rng() % 6);
    const BitMatrix pred = random_matrix(rng, rows, cols);
    const BitMatrix gt = random_matrix(rng, rows, cols);

    for (bool empty_one : {true, false}) {
      F1Options opt;
      opt.empty = empty_one ? F1Options::EmptyPolicy::kOne : F1Options::EmptyPolicy::kZero;
      const Oracle o = score(pred, gt, empty_one);
      CHECK(f1_overall(pred, gt, opt) == doctest::Approx(o.overall_sample).epsilon(1e-12));
      opt.overall = F1Options::OverallPolicy::kMicro;
      CHECK(f1_overall(pred, gt, opt) == doctest::Approx(o.overall_micro).epsilon(1e-12));
    }
    const Oracle o = score(pred, gt, true);
    CHECK(f1_mean(pred, gt) == doctest::Approx(o.macro).epsilon(1e-12));
    const PerClass pc = per_class_f1(pred, gt);
    for (int c = 0; c < cols; ++c)
      CHECK(pc.f1[std::size_t(c)] == doctest::Approx(o.per_class[std::size_t(c)]).epsilon(1e-12));
  }
}

TEST_CASE("joint F1 expands both sides through the pair matrix identically") {
  const PairMatrix pm = PairMatrix::defaults();
  BitMatrix ap(2, 4), rp(2, 21), ag(2, 4), rg(2, 21);
  // sample 0: predicted stop/obstacle_car, truth stop/obstacle_car -> match
  ap.at(0, kStopSlowDown) = 1;
  rp.at(0, 3) = 1;
  ag.at(0, kStopSlowDown) = 1;
  rg.at(0, 3) = 1;
  // sample 1: predicted forward/road_clear, truth stop/traffic_light -> miss
  ap.at(1, kMoveForward) = 1;
  rp.at(1, 1) = 1;
  ag.at(1, kStopSlowDown) = 1;
  rg.at(1, 7) = 1;

  const JointResult jr = joint_f1(ap, rp, ag, rg, pm);
  CHECK(jr.pred.cols == 33);
  CHECK(jr.gt.cols == 33);
  CHECK(jr.overall == doctest::Approx(0.5));
  // expansion must agree with joint_expand row by row
  for (int r = 0; r < 2; ++r) {
    CHECK(jr.pred.row(r) == joint_expand(ap.row(r), rp.row(r), pm));
    CHECK(jr.gt.row(r) == joint_expand(ag.row(r), rg.row(r), pm));
  }
}

TEST_CASE("joint F1 ignores reasons that pair with no active action") {
  const PairMatrix pm = PairMatrix::defaults();
  std::mt19937_64 rng(77);
  BitMatrix ap = random_matrix(rng, 6, 4), ag = random_matrix(rng, 6, 4);
  BitMatrix rp = random_matrix(rng, 6, 21), rg = random_matrix(rng, 6, 21);
  const JointResult before = joint_f1(ap, rp, ag, rg, pm);

  // road_clear (index 1) pairs only with move_forward; flipping it on rows
  // where move_forward is off cannot change the expansion
  BitMatrix rp2 = rp;
  bool flipped = false;
  for (int r = 0; r < 6; ++r)
    if (!ap.at(r, kMoveForward)) {
      rp2.at(r, 1) ^= 1;
      flipped = true;
    }
  REQUIRE(flipped);
  const JointResult after = joint_f1(ap, rp2, ag, rg, pm);
  CHECK(after.overall == doctest::Approx(before.overall).epsilon(1e-15));
  CHECK(after.pred.v == before.pred.v);
}

TEST_CASE("sample order does not change the aggregates") {
  const PairMatrix pm = PairMatrix::defaults();
  std::mt19937_64 rng(88);
  const int n = 12;
  BitMatrix ap = random_matrix(rng, n, 4), ag = random_matrix(rng, n, 4);
  BitMatrix rp = random_matrix(rng, n, 21), rg = random_matrix(rng, n, 21);

  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[std::size_t(i)] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  auto permute = [&perm](const BitMatrix& m) {
    BitMatrix out(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r)
      for (int c = 0; c < m.cols; ++c) out.at(r, c) = m.at(perm[std::size_t(r)], c);
    return out;
  };

  const MetricsReport a = build_report(ap, rp, ag, rg, pm);
  const MetricsReport b =
      build_report(permute(ap), permute(rp), permute(ag), permute(rg), pm);
  CHECK(a.action_overall == doctest::Approx(b.action_overall).epsilon(1e-15));
  CHECK(a.reason_overall == doctest::Approx(b.reason_overall).epsilon(1e-15));
  CHECK(a.joint_overall == doctest::Approx(b.joint_overall).epsilon(1e-15));
  CHECK(a.action_mean == doctest::Approx(b.action_mean).epsilon(1e-15));
  CHECK(a.joint_mean == doctest::Approx(b.joint_mean).epsilon(1e-15));
}

TEST_CASE("report carries pair names and policy strings") {
  const PairMatrix pm = PairMatrix::defaults();
  std::mt19937_64 rng(99);
  const BitMatrix ap = random_matrix(rng, 5, 4), ag = random_matrix(rng, 5, 4);
  const BitMatrix rp = random_matrix(rng, 5, 21), rg = random_matrix(rng, 5, 21);
  F1Options opt;
  opt.empty = F1Options::EmptyPolicy::kZero;
  opt.overall = F1Options::OverallPolicy::kMicro;

  const MetricsReport rep = build_report(ap, rp, ag, rg, pm, false, opt);
  CHECK(rep.samples == 5);
  CHECK(rep.pair_names.size() == 33);
  CHECK(rep.pair_names[0] == "move_forward/follow_traffic");
  CHECK(rep.empty_policy == "zero");
  CHECK(rep.overall_policy == "micro");
  CHECK(!rep.turn_exclusion);
  CHECK(rep.action.f1.size() == 4);
  CHECK(rep.reason.f1.size() == 21);
  CHECK(rep.pair.f1.size() == 33);
}

TEST_CASE("csv report has one row per class and summary line") {
  const PairMatrix pm = PairMatrix::defaults();
  std::mt19937_64 rng(111);
  const MetricsReport rep =
      build_report(random_matrix(rng, 4, 4), random_matrix(rng, 4, 21),
                   random_matrix(rng, 4, 4), random_matrix(rng, 4, 21), pm);
  const std::string csv = render_csv(rep);
  const long lines = std::count(csv.begin(), csv.end(), '\n');
  CHECK(lines == 1 + 4 + 21 + 33 + 6);  // header, classes, pairs, summaries
  CHECK(csv.rfind("group,name,f1,support,tp,fp,fn\n", 0) == 0);
}

TEST_CASE("json report parses and round-trips the aggregates") {
  const PairMatrix pm = PairMatrix::defaults();
  std::mt19937_64 rng(222);
  MetricsReport rep =
      build_report(random_matrix(rng, 4, 4), random_matrix(rng, 4, 21),
                   random_matrix(rng, 4, 4), random_matrix(rng, 4, 21), pm);
  rep.checkpoint = "cafebabe";
  rep.split = "val";
  const nlohmann::json j = nlohmann::json::parse(render_json(rep));
  CHECK(j["samples"] == 4);
  CHECK(j["checkpoint"] == "cafebabe");
  CHECK(j["split"] == "val");
  CHECK(j["action_overall"].get<double>() == doctest::Approx(rep.action_overall));
  CHECK(j["joint_mean"].get<double>() == doctest::Approx(rep.joint_mean));
  CHECK(j["pair"].size() == 33);
  CHECK(j["reason"][0]["name"] == "follow_traffic");

  const std::string text = render_text(rep);
  CHECK(text.find("samples: 4") != std::string::npos);
  CHECK(text.find("per-pair F1") != std::string::npos);
}
