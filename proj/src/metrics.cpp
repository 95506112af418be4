#include "arnet/metrics.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace arnet {

namespace {

void check_same(const BitMatrix& a, const BitMatrix& b, const char* what) {
  require(a.rows == b.rows && a.cols == b.cols,
          std::string(what) + ": prediction and ground truth shapes differ");
}

void check_binary(const BitMatrix& m, const char* what) {
  for (auto v : m.v) require(v <= 1, std::string(what) + ": entries must be 0/1");
}

}  // namespace

double f1_sample(const Bits& pred, const Bits& gt, const F1Options& opt) {
  require(pred.size() == gt.size(), "f1_sample: vector lengths differ");
  std::int64_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    require(pred[i] <= 1 && gt[i] <= 1, "f1_sample: entries must be 0/1");
    inter += pred[i] & gt[i];
    np += pred[i];
    ng += gt[i];
  }
  if (np + ng == 0)
    return opt.empty == F1Options::EmptyPolicy::kOne ? 1.0 : 0.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

double f1_overall(const BitMatrix& pred, const BitMatrix& gt, const F1Options& opt) {
  check_same(pred, gt, "f1_overall");
  check_binary(pred, "f1_overall");
  check_binary(gt, "f1_overall");
  require(pred.rows > 0, "f1_overall: empty sample set");
  if (opt.overall == F1Options::OverallPolicy::kMicro) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (int r = 0; r < pred.rows; ++r)
      for (int c = 0; c < pred.cols; ++c) {
        const int p = pred.at(r, c), g = gt.at(r, c);
        tp += p & g;
        fp += p & ~g & 1;
        fn += ~p & g & 1;
      }
    const std::int64_t denom = 2 * tp + fp + fn;
    return denom == 0 ? (opt.empty == F1Options::EmptyPolicy::kOne ? 1.0 : 0.0)
                      : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  double sum = 0;
  for (int r = 0; r < pred.rows; ++r) sum += f1_sample(pred.row(r), gt.row(r), opt);
  return sum / pred.rows;
}

PerClass per_class_f1(const BitMatrix& pred, const BitMatrix& gt) {
  check_same(pred, gt, "per_class_f1");
  check_binary(pred, "per_class_f1");
  check_binary(gt, "per_class_f1");
  PerClass out;
  out.f1.assign(static_cast<std::size_t>(pred.cols), 0.0);
  out.support.assign(static_cast<std::size_t>(pred.cols), 0);
  out.tp.assign(static_cast<std::size_t>(pred.cols), 0);
  out.fp.assign(static_cast<std::size_t>(pred.cols), 0);
  out.fn.assign(static_cast<std::size_t>(pred.cols), 0);
  for (int c = 0; c < pred.cols; ++c) {
    std::int64_t tp = 0, fp = 0, fn = 0, sup = 0;
    for (int r = 0; r < pred.rows; ++r) {
      const int p = pred.at(r, c), g = gt.at(r, c);
      tp += p & g;
      fp += p & ~g & 1;
      fn += ~p & g & 1;
      sup += g;
    }
    const std::int64_t denom = 2 * tp + fp + fn;
    // zero support and zero predictions: scored 0, not 1, so that absent
    // classes cannot pad the macro average
    out.f1[static_cast<std::size_t>(c)] =
        denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    out.support[static_cast<std::size_t>(c)] = sup;
    out.tp[static_cast<std::size_t>(c)] = tp;
    out.fp[static_cast<std::size_t>(c)] = fp;
    out.fn[static_cast<std::size_t>(c)] = fn;
  }
  return out;
}

double f1_mean(const BitMatrix& pred, const BitMatrix& gt) {
  require(pred.cols > 0, "f1_mean: no classes");
  const PerClass pc = per_class_f1(pred, gt);
  double s = 0;
  for (double v : pc.f1) s += v;
  return s / static_cast<double>(pc.f1.size());
}

JointResult joint_f1(const BitMatrix& action_pred, const BitMatrix& reason_pred,
                     const BitMatrix& action_gt, const BitMatrix& reason_gt,
                     const PairMatrix& pm, bool turn_exclusion, const F1Options& opt) {
  check_same(action_pred, action_gt, "joint_f1 actions");
  check_same(reason_pred, reason_gt, "joint_f1 reasons");
  require(action_pred.rows == reason_pred.rows, "joint_f1: row counts differ");
  const int n = action_pred.rows;
  require(n > 0, "joint_f1: empty sample set");
  const int np = static_cast<int>(pm.pairs.size());
  JointResult res;
  res.pred = BitMatrix(n, np);
  res.gt = BitMatrix(n, np);
  for (int i = 0; i < n; ++i) {
    const Bits jp =
        joint_expand(action_pred.row(i), reason_pred.row(i), pm, turn_exclusion);
    const Bits jg = joint_expand(action_gt.row(i), reason_gt.row(i), pm, turn_exclusion);
    for (int k = 0; k < np; ++k) {
      res.pred.at(i, k) = jp[static_cast<std::size_t>(k)];
      res.gt.at(i, k) = jg[static_cast<std::size_t>(k)];
    }
  }
  res.overall = f1_overall(res.pred, res.gt, opt);
  res.mean = f1_mean(res.pred, res.gt);
  res.per_pair = per_class_f1(res.pred, res.gt);
  return res;
}

MetricsReport build_report(const BitMatrix& action_pred, const BitMatrix& reason_pred,
                           const BitMatrix& action_gt, const BitMatrix& reason_gt,
                           const PairMatrix& pm, bool turn_exclusion,
                           const F1Options& opt) {
  MetricsReport r;
  r.samples = action_pred.rows;
  r.action_overall = f1_overall(action_pred, action_gt, opt);
  r.action_mean = f1_mean(action_pred, action_gt);
  r.reason_overall = f1_overall(reason_pred, reason_gt, opt);
  r.reason_mean = f1_mean(reason_pred, reason_gt);
  r.action = per_class_f1(action_pred, action_gt);
  r.reason = per_class_f1(reason_pred, reason_gt);
  JointResult j = joint_f1(action_pred, reason_pred, action_gt, reason_gt, pm,
                           turn_exclusion, opt);
  r.joint_overall = j.overall;
  r.joint_mean = j.mean;
  r.pair = std::move(j.per_pair);
  for (auto [a, rr] : pm.pairs)
    r.pair_names.push_back(pm.actions[static_cast<std::size_t>(a)] + "/" +
                           pm.reasons[static_cast<std::size_t>(rr)]);
  r.empty_policy = opt.empty == F1Options::EmptyPolicy::kOne ? "one" : "zero";
  r.overall_policy =
      opt.overall == F1Options::OverallPolicy::kSampleAveraged ? "sample" : "micro";
  r.turn_exclusion = turn_exclusion;
  return r;
}

namespace {
std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}
}  // namespace

std::string render_text(const MetricsReport& r) {
  std::ostringstream os;
  os << "samples: " << r.samples << "\n";
  if (!r.checkpoint.empty()) os << "checkpoint: " << r.checkpoint << "\n";
  if (!r.split.empty()) os << "split: " << r.split << "\n";
  os << "empty-policy: " << r.empty_policy << "  overall-policy: " << r.overall_policy
     << "  turn-exclusion: " << (r.turn_exclusion ? "on" : "off") << "\n\n";
  os << "group    overall  mean\n";
  os << "action   " << fixed3(r.action_overall) << "    " << fixed3(r.action_mean) << "\n";
  os << "reason   " << fixed3(r.reason_overall) << "    " << fixed3(r.reason_mean) << "\n";
  os << "joint    " << fixed3(r.joint_overall) << "    " << fixed3(r.joint_mean) << "\n\n";
  os << "per-action F1\n";
  for (std::size_t i = 0; i < r.action.f1.size(); ++i)
    os << "  " << kActionNames[i] << ": " << fixed3(r.action.f1[i])
       << " (support " << r.action.support[i] << ")\n";
  os << "per-reason F1\n";
  for (std::size_t i = 0; i < r.reason.f1.size(); ++i)
    os << "  " << kReasonNames[i] << ": " << fixed3(r.reason.f1[i])
       << " (support " << r.reason.support[i] << ")\n";
  os << "per-pair F1\n";
  for (std::size_t i = 0; i < r.pair.f1.size(); ++i)
    os << "  " << r.pair_names[i] << ": " << fixed3(r.pair.f1[i]) << " (support "
       << r.pair.support[i] << ")\n";
  return os.str();
}

std::string render_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "group,name,f1,support,tp,fp,fn\n";
  os.precision(17);
  auto rows = [&os](const char* group, const PerClass& pc, auto name_of) {
    for (std::size_t i = 0; i < pc.f1.size(); ++i)
      os << group << ',' << name_of(i) << ',' << pc.f1[i] << ',' << pc.support[i] << ','
         << pc.tp[i] << ',' << pc.fp[i] << ',' << pc.fn[i] << '\n';
  };
  rows("action", r.action, [](std::size_t i) { return kActionNames[i]; });
  rows("reason", r.reason, [](std::size_t i) { return kReasonNames[i]; });
  rows("pair", r.pair, [&r](std::size_t i) { return r.pair_names[i]; });
  os << "summary,action_overall," << r.action_overall << ",,,,\n";
  os << "summary,action_mean," << r.action_mean << ",,,,\n";
  os << "summary,reason_overall," << r.reason_overall << ",,,,\n";
  os << "summary,reason_mean," << r.reason_mean << ",,,,\n";
  os << "summary,joint_overall," << r.joint_overall << ",,,,\n";
  os << "summary,joint_mean," << r.joint_mean << ",,,,\n";
  return os.str();
}

std::string render_json(const MetricsReport& r) {
  nlohmann::json j;
  j["samples"] = r.samples;
  if (!r.checkpoint.empty()) j["checkpoint"] = r.checkpoint;
  if (!r.split.empty()) j["split"] = r.split;
  j["empty_policy"] = r.empty_policy;
  j["overall_policy"] = r.overall_policy;
  j["turn_exclusion"] = r.turn_exclusion;
  j["action_overall"] = r.action_overall;
  j["action_mean"] = r.action_mean;
  j["reason_overall"] = r.reason_overall;
  j["reason_mean"] = r.reason_mean;
  j["joint_overall"] = r.joint_overall;
  j["joint_mean"] = r.joint_mean;
  auto dump = [](const PerClass& pc, auto name_of) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t i = 0; i < pc.f1.size(); ++i)
      arr.push_back({{"name", name_of(i)},
                     {"f1", pc.f1[i]},
                     {"support", pc.support[i]},
                     {"tp", pc.tp[i]},
                     {"fp", pc.fp[i]},
                     {"fn", pc.fn[i]}});
    return arr;
  };
  j["action"] = dump(r.action, [](std::size_t i) { return kActionNames[i]; });
  j["reason"] = dump(r.reason, [](std::size_t i) { return kReasonNames[i]; });
  j["pair"] = dump(r.pair, [&r](std::size_t i) { return r.pair_names[i]; });
  return j.dump(2);
}

}  // namespace arnet
